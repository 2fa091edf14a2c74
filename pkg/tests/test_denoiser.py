import numpy as np
import pytest

from conftest import separated_oracle
from fpdm.denoiser.model import (
    ArchitectureMismatch,
    ArchSpec,
    CheckpointError,
    TinyDenoiser,
    load_checkpoint,
    save_checkpoint,
)
from fpdm.denoiser.train import (
    Adam,
    TrainConfig,
    TrainingDivergence,
    drop_labels,
    ema_update,
    ema_warmup_rate,
    train,
    training_step,
)
from fpdm.schedule import make_linear_schedule
from fpdm.score import Condition, OracleBackend

TINY = ArchSpec(widths=(4, 8), time_dim=8, embed_dim=8)


class TestForward:
    @pytest.mark.parametrize("side", [32, 64])
    def test_shape(self, side):
        m = TinyDenoiser.initialize(seed=1)
        x = np.random.default_rng(0).normal(size=(2, side, side))
        assert m.predict(x, 5, Condition.HEALTHY).shape == (2, side, side)
        assert m.predict(x[0], 5, Condition.NULL).shape == (side, side)

    def test_deterministic_and_finite(self):
        m = TinyDenoiser.initialize(seed=2)
        x = np.random.default_rng(1).normal(size=(32, 32))
        a, b = m.forward(x, 10, Condition.UNHEALTHY), m.forward(x, 10, Condition.UNHEALTHY)
        assert a.tobytes() == b.tobytes()
        assert np.all(np.isfinite(a))

    def test_condition_changes_output(self):
        m = TinyDenoiser.initialize(TINY, seed=0)
        m.params[m.layout["label"]:m.layout["label"] + 3 * TINY.embed_dim] = np.arange(24) / 10.0
        x = np.zeros((8, 8))
        assert not np.allclose(m.predict(x, 3, Condition.HEALTHY), m.predict(x, 3, Condition.NULL))

    def test_pair_matches_separate_calls(self):
        m = TinyDenoiser.initialize(TINY, seed=3)
        x = np.random.default_rng(0).normal(size=(3, 8, 8))
        h, n = m.predict_pair(x, 7)
        np.testing.assert_allclose(h, m.predict(x, 7, Condition.HEALTHY), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(n, m.predict(x, 7, Condition.NULL), rtol=1e-5, atol=1e-6)

    def test_indivisible_grid(self):
        with pytest.raises(ValueError):
            TinyDenoiser.initialize(seed=0).forward(np.zeros((6, 6)), 1, Condition.NULL)

    def test_bad_arch(self):
        with pytest.raises(ValueError):
            ArchSpec(widths=())
        with pytest.raises(ValueError):
            ArchSpec(time_dim=7)


class TestGradients:
    def test_central_differences(self):
        m = TinyDenoiser.initialize(ArchSpec(widths=(3, 4), time_dim=4, embed_dim=4), seed=5, dtype=np.float64)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 4, 4))
        t, labels, target = np.array([3, 17]), np.array([0, 2]), rng.normal(size=(2, 4, 4))
        _, grad = m.loss_and_grad(x, t, labels, target)
        h = 1e-5
        checked = 0
        for k in rng.permutation(m.params.size):
            if checked == 60:
                break
            if abs(grad[k]) < 1e-6:  # relative error is meaningless on vanishing entries
                continue
            old = m.params[k]
            m.params[k] = old + h
            up = m.loss_and_grad(x, t, labels, target)[0]
            m.params[k] = old - h
            down = m.loss_and_grad(x, t, labels, target)[0]
            m.params[k] = old
            num = (up - down) / (2 * h)
            assert abs(num - grad[k]) <= 1e-4 * abs(grad[k]), (k, num, grad[k])
            checked += 1
        assert checked >= 50


def constant_data(n=64, side=8):
    return np.full((n, side, side), 0.4), np.zeros(n, dtype=np.int64)


class TestTraining:
    def test_loss_halves_on_constant_data(self):
        s = make_linear_schedule(50)
        m = TinyDenoiser.initialize(TINY, seed=0)
        x, y = constant_data()
        cfg = TrainConfig(batch_size=16, epochs=1000, seed=1)
        losses = train(m, x, y, s, cfg, max_steps=200)
        assert len(losses) == 200
        assert np.mean(losses[-20:]) <= 0.5 * np.mean(losses[:5])

    def test_bit_reproducible(self):
        s = make_linear_schedule(20)
        x, y = constant_data(32)
        runs = []
        for _ in range(2):
            m = TinyDenoiser.initialize(TINY, seed=4)
            ema = m.copy()
            losses = train(m, x, y, s, TrainConfig(batch_size=8, epochs=2, seed=9), ema)
            runs.append((m.params.tobytes(), ema.params.tobytes(), losses))
        assert runs[0] == runs[1]

    def test_callback_stops(self):
        s = make_linear_schedule(20)
        x, y = constant_data(32)
        m = TinyDenoiser.initialize(TINY, seed=0)
        seen = []
        losses = train(m, x, y, s, TrainConfig(batch_size=8, epochs=5), callback=lambda k, _: seen.append(k) or k == 3)
        assert len(losses) == 3 and seen == [1, 2, 3]

    @pytest.mark.parametrize("ratio,expect", [(0.0, False), (1.0, True)])
    def test_dropout_extremes(self, ratio, expect):
        labels = np.array([0, 1] * 50)
        out = drop_labels(labels, ratio, np.random.default_rng(0))
        assert (out == int(Condition.NULL)).all() == expect
        assert (out == int(Condition.NULL)).any() == expect

    def test_dropout_rate(self):
        out = drop_labels(np.zeros(20_000, dtype=int), 0.1, np.random.default_rng(0))
        assert abs(np.mean(out == int(Condition.NULL)) - 0.1) < 4 * np.sqrt(0.09 / 20_000)

    def test_rejects_null_labels_and_divergence(self):
        s = make_linear_schedule(10)
        m = TinyDenoiser.initialize(TINY, seed=0)
        opt = Adam(m.params.size, TrainConfig())
        with pytest.raises(ValueError):
            training_step(m, opt, np.zeros((2, 8, 8)), [0, 2], s, TrainConfig(), np.random.default_rng(0))
        with pytest.raises(TrainingDivergence):
            training_step(m, opt, np.full((2, 8, 8), np.nan), [0, 1], s, TrainConfig(), np.random.default_rng(0))

    def test_config_bounds(self):
        with pytest.raises(ValueError):
            TrainConfig(null_ratio=1.5)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_approaches_oracle(self):
        """Mean squared gap to the exact mixture noise shrinks across checkpoints."""
        s = make_linear_schedule(50)
        o = separated_oracle((8, 8), sep=3.0, sigma=0.2, seed=1)
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, 512)
        data = np.stack([o.sample(rng, int(c)) for c in labels])
        probe_rng = np.random.default_rng(1)
        t = probe_rng.integers(1, 51, 64)
        x0 = np.stack([o.sample(probe_rng, int(c)) for c in probe_rng.integers(0, 2, 64)])
        ab = s.alpha_bar[t][:, None, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * probe_rng.standard_normal(x0.shape)
        ref = np.stack([OracleBackend(o, s).predict(x_t[k], int(t[k]), Condition.NULL) for k in range(64)])

        m = TinyDenoiser.initialize(TINY, seed=0)
        cfg = TrainConfig(batch_size=32, epochs=1000, seed=2)
        gaps = []
        probe = lambda: float(np.mean([(m.predict(x_t[k], t[k], Condition.NULL) - ref[k]) ** 2 for k in range(64)]))
        gaps.append(probe())
        for _ in range(3):
            train(m, data, labels, s, cfg, max_steps=150)
            cfg = TrainConfig(batch_size=32, epochs=1000, seed=cfg.seed + 1)
            gaps.append(probe())
        assert all(b < a for a, b in zip(gaps, gaps[1:])), gaps


class TestEma:
    def test_examples(self):
        a, b = TinyDenoiser(TINY), TinyDenoiser(TINY)
        a.params[:] = 1.0
        b.params[:] = 0.0
        ema_update(a, b, 1.0)
        assert np.all(a.params == 1.0)
        ema_update(a, b, 0.9)
        np.testing.assert_allclose(a.params, 0.9, rtol=1e-6)
        ema_update(a, b, 0.0)
        assert np.all(a.params == 0.0)

    def test_mismatch(self):
        with pytest.raises(ArchitectureMismatch):
            ema_update(TinyDenoiser(TINY), TinyDenoiser(), 0.5)

    def test_warmup(self):
        assert ema_warmup_rate(0.999, 0) == pytest.approx(0.1)
        assert ema_warmup_rate(0.999, 90) == pytest.approx(91 / 100)
        assert ema_warmup_rate(0.999, 10 ** 6) == 0.999


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        m = TinyDenoiser.initialize(TINY, seed=1)
        ema = TinyDenoiser.initialize(TINY, seed=2)
        save_checkpoint(tmp_path / "m.ckpt", m, ema)
        m2, e2 = load_checkpoint(tmp_path / "m.ckpt")
        assert m2.arch == TINY
        assert m2.params.tobytes() == m.params.tobytes() and e2.params.tobytes() == ema.params.tobytes()
        save_checkpoint(tmp_path / "n.ckpt", m)
        assert load_checkpoint(tmp_path / "n.ckpt")[1] is None
        assert (tmp_path / "m.ckpt").read_bytes()[:4] == b"FPDM"

    @pytest.mark.parametrize("damage", ["magic", "truncate", "trailing", "flag", "count"])
    def test_corruption(self, tmp_path, damage):
        save_checkpoint(tmp_path / "m.ckpt", TinyDenoiser.initialize(TINY, seed=1))
        blob = bytearray((tmp_path / "m.ckpt").read_bytes())
        if damage == "magic":
            blob[:4] = b"XXXX"
        elif damage == "truncate":
            blob = blob[:-9]
        elif damage == "trailing":
            blob += b"\x00"
        elif damage == "flag":
            blob[-1] = 7
        else:
            alen = int.from_bytes(blob[6:10], "little")
            blob[10 + alen:18 + alen] = (5).to_bytes(8, "little")
        (tmp_path / "m.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.ckpt")

    def test_wrong_parameter_count(self):
        with pytest.raises(ArchitectureMismatch):
            TinyDenoiser(TINY, np.zeros(3))
        with pytest.raises(ArchitectureMismatch):
            save_checkpoint("/dev/null", TinyDenoiser(TINY), TinyDenoiser())
