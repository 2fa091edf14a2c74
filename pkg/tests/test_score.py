import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import AffinePredictor, separated_oracle
from fpdm.forward import predict_x0
from fpdm.schedule import make_linear_schedule
from fpdm.score import (
    Condition,
    GaussianMixtureOracle,
    OracleBackend,
    combine_guidance,
    guided_noise,
    implicit_classifier_gradient,
    oracle_predict_noise,
)


class Const:
    def __init__(self, values):
        self.values = values

    def predict(self, x_t, t, c):
        return np.full(np.shape(x_t), self.values[Condition(c)])


class TestGuidedNoise:
    def test_zero_guidance_is_conditional(self):
        p = AffinePredictor((3, 3))
        x = np.random.default_rng(0).normal(size=(3, 3))
        np.testing.assert_array_equal(guided_noise(p, x, 7, Condition.HEALTHY, 0.0),
                                      p.predict(x, 7, Condition.HEALTHY))

    def test_equal_predictions_are_fixed_points(self):
        p = AffinePredictor((3, 3), same=True)
        x = np.ones((3, 3))
        for w in (0.0, 1.5, 30.0):
            np.testing.assert_allclose(guided_noise(p, x, 3, Condition.HEALTHY, w),
                                       p.predict(x, 3, Condition.NULL), rtol=1e-14)

    def test_scalar_arithmetic(self):
        p = Const({Condition.HEALTHY: 0.2, Condition.NULL: 0.1, Condition.UNHEALTHY: 0.0})
        assert guided_noise(p, np.zeros(1), 1, Condition.HEALTHY, 2.0)[0] == pytest.approx(0.4, abs=1e-15)

    def test_null_label_rejected(self):
        with pytest.raises(ValueError):
            guided_noise(Const({c: 0.0 for c in Condition}), np.zeros(1), 1, Condition.NULL, 1.0)

    @given(st.floats(0, 30), st.floats(0, 30))
    def test_affine_in_w(self, w1, w2):
        rng = np.random.default_rng(3)
        eh, en = rng.normal(size=8), rng.normal(size=8)
        lhs = combine_guidance(eh, en, w1) + combine_guidance(eh, en, w2)
        np.testing.assert_allclose(lhs, 2 * combine_guidance(eh, en, (w1 + w2) / 2), rtol=1e-12, atol=1e-12)


class TestOracle:
    def test_one_pixel_example(self):
        s = make_linear_schedule(1, 0.75, 0.75)  # alpha_bar_1 = 0.25
        o = GaussianMixtureOracle(np.array([[-0.5], [0.5]]), np.array([[0.01], [0.01]]), np.array([0.5, 0.5]))
        eps = oracle_predict_noise(o, s, np.zeros(1), 1, Condition.HEALTHY)
        assert eps[0] == pytest.approx(0.28771608099150785607, rel=1e-14)

    def test_score_vanishes_at_mode(self, sched50):
        o = separated_oracle()
        ab = sched50.alpha_bar[20]
        x = np.sqrt(ab) * o.means[0]
        np.testing.assert_allclose(oracle_predict_noise(o, sched50, x, 20, Condition.HEALTHY), 0.0, atol=1e-15)

    def test_degenerate_mixture_null_equals_healthy(self, sched50):
        mu = np.random.default_rng(0).normal(size=(3, 3))
        o = GaussianMixtureOracle(np.stack([mu, mu]), np.full((2, 3, 3), 0.04), np.array([0.5, 0.5]))
        x = np.random.default_rng(1).normal(size=(3, 3))
        np.testing.assert_allclose(oracle_predict_noise(o, sched50, x, 10, Condition.NULL),
                                   oracle_predict_noise(o, sched50, x, 10, Condition.HEALTHY), rtol=1e-13)

    @pytest.mark.parametrize("bad", [
        dict(variances=np.zeros((2, 2))),
        dict(priors=np.array([0.7, 0.7])),
        dict(priors=np.array([1.0, 0.0])),
    ])
    def test_invalid_parameters(self, bad):
        kw = dict(means=np.zeros((2, 2)), variances=np.ones((2, 2)), priors=np.array([0.5, 0.5]))
        kw.update(bad)
        with pytest.raises(ValueError):
            GaussianMixtureOracle(**kw)

    def test_score_matches_finite_differences(self, sched50):
        rng = np.random.default_rng(11)
        o = separated_oracle((3, 3), sep=2.0, sigma=0.3, seed=4, prior=0.3)
        h = 1e-5
        for _ in range(100):
            t = int(rng.integers(1, 51))
            ab = float(sched50.alpha_bar[t])
            x = np.sqrt(ab) * o.means[rng.integers(2)] + rng.normal(size=(3, 3)) * 0.5
            num = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                e = np.zeros_like(x)
                e[idx] = h
                num[idx] = (o.log_density(x + e, ab) - o.log_density(x - e, ab)) / (2 * h)
            ana = o.score(x, ab, Condition.NULL)
            np.testing.assert_allclose(ana, num, rtol=1e-6, atol=1e-7)

    def test_batched_prediction_matches_single(self, sched50):
        o = separated_oracle()
        xs = np.random.default_rng(2).normal(size=(5, 4, 4))
        batch = oracle_predict_noise(o, sched50, xs, 9, Condition.NULL)
        for k in range(5):
            np.testing.assert_allclose(batch[k], oracle_predict_noise(o, sched50, xs[k], 9, Condition.NULL),
                                       rtol=1e-14)


class TestImplicitClassifier:
    def test_equal_predictions_give_zero(self, sched50):
        p = AffinePredictor((2, 2), same=True)
        np.testing.assert_array_equal(implicit_classifier_gradient(p, np.ones((2, 2)), 5, sched50), 0.0)

    def test_scalar_arithmetic(self):
        s = make_linear_schedule(1, 0.25, 0.25)  # alpha_bar_1 = 0.75
        p = Const({Condition.HEALTHY: 0.1, Condition.NULL: 0.3, Condition.UNHEALTHY: 0.0})
        assert implicit_classifier_gradient(p, np.zeros(1), 1, s)[0] == pytest.approx(0.4, rel=1e-12)

    def test_points_toward_healthy_mean(self, sched50):
        mu = np.linspace(0.2, 0.6, 6).reshape(2, 3)
        o = GaussianMixtureOracle(np.stack([mu, -mu]), np.full((2, 2, 3), 0.01), np.array([0.5, 0.5]))
        g = implicit_classifier_gradient(OracleBackend(o, sched50), np.zeros((2, 3)), 10, sched50)
        assert np.all(np.sign(g) == np.sign(mu))

    def test_gradient_is_score_difference(self, sched50):
        o = separated_oracle(sep=1.0, sigma=0.4)
        pred = OracleBackend(o, sched50)
        x = np.random.default_rng(5).normal(size=(4, 4))
        ab = sched50.alpha_bar[15]
        expect = o.score(x, ab, Condition.HEALTHY) - o.score(x, ab, Condition.NULL)
        np.testing.assert_allclose(implicit_classifier_gradient(pred, x, 15, sched50), expect, rtol=1e-10)


class TestNullErrorUnbiased:
    N = 10_000

    def _errors(self, o, s, x0s, t, rng):
        ab = s.alpha_bar[t]
        x_t = np.sqrt(ab) * x0s + np.sqrt(1 - ab) * rng.standard_normal(x0s.shape)
        return predict_x0(x_t, t, oracle_predict_noise(o, s, x_t, t, Condition.NULL), s) - x0s

    @pytest.mark.parametrize("t", [5, 25, 50])
    def test_mean_vanishes_over_model_draws(self, t):
        s = make_linear_schedule(50)
        o = separated_oracle((2, 2), sep=3.0, sigma=0.2, seed=9)
        rng = np.random.default_rng(t)
        pick = rng.random(self.N)[:, None, None] < 0.5
        x0s = np.where(pick, o.sample(rng, 0, self.N), o.sample(rng, 1, self.N))
        err = self._errors(o, s, x0s, t, rng)
        assert np.all(np.abs(err.mean(axis=0)) <= 3 * err.std(axis=0) / np.sqrt(self.N))

    def test_mean_vanishes_at_fixed_input_on_the_mode(self):
        s = make_linear_schedule(50)
        mu = np.array([[0.3, -0.2], [0.1, 0.4]])
        o = GaussianMixtureOracle(np.stack([mu, mu]), np.full((2, 2, 2), 0.04), np.array([0.5, 0.5]))
        rng = np.random.default_rng(0)
        err = self._errors(o, s, np.broadcast_to(mu, (self.N, 2, 2)), 30, rng)
        assert np.all(np.abs(err.mean(axis=0)) <= 3 * err.std(axis=0) / np.sqrt(self.N))
