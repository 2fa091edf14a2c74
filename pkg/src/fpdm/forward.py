"""Forward encodings, one-step predictions, divergence, and the per-step sweep.

A sweep walks one noising trajectory (stochastic: fresh Gaussian draw per
step; deterministic: DDIM encoding seeded only through ``x_1``) and at every
evaluated step records the healthy-guided and unguided one-step predictions of
``x_0``, their divergence, and the two pixel-level errors against ``x_0``.

The guided and unguided predictions share the trajectory, and the DDIM drift
uses the unguided prediction. Because nothing on the trajectory depends on the
guidance strength, one walk serves any number of guidance values; see
:func:`sweep_multi`.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .numerics import mse
from .schedule import DiffusionSchedule
from .score import Condition, NoisePredictor, combine_guidance


class Encoding(str, enum.Enum):
    STOCHASTIC = "ddpm"
    DETERMINISTIC = "ddim"


class Storage(str, enum.Enum):
    STORE_ALL = "store-all"
    TWO_PASS = "two-pass"


class Drift(str, enum.Enum):
    """Which prediction drives the DDIM encoding of the guided chain."""

    UNGUIDED = "unguided"  # one shared trajectory
    GUIDED = "guided"  # guided chain drifts with its own guided prediction


class NumericFailure(ArithmeticError):
    def __init__(self, step: int, what: str = "non-finite value"):
        super().__init__(f"{what} at step {step}")
        self.step = step


def step_noise(seed: int, t: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal field for ``(seed, t)``: independent of walk order and stride."""
    return np.random.default_rng([int(seed), int(t)]).standard_normal(shape)


def ddpm_noise_to(x0, t: int, schedule: DiffusionSchedule, rng: np.random.Generator):
    """Draw ``x_t ~ q(x_t | x_0)``; returns ``(x_t, eps)``."""
    schedule.check_step(t)
    x0 = np.asarray(x0, dtype=float)
    eps = rng.standard_normal(x0.shape)
    return schedule.sqrt_ab(t) * x0 + schedule.sqrt_1m_ab(t) * eps, eps


def predict_x0(x_t, t: int, eps, schedule: DiffusionSchedule) -> np.ndarray:
    return (np.asarray(x_t, dtype=float) - schedule.sqrt_1m_ab(t) * eps) / schedule.sqrt_ab(t)


def one_step_prediction(x_t, t: int, pred: NoisePredictor, schedule: DiffusionSchedule,
                        w: float | None = None) -> np.ndarray:
    """Unguided prediction of ``x_0`` when ``w`` is None, else healthy-guided with strength ``w``."""
    schedule.check_step(t)
    eps_null = np.asarray(pred.predict(x_t, t, Condition.NULL), dtype=float)
    if w is None:
        return predict_x0(x_t, t, eps_null, schedule)
    eps_h = np.asarray(pred.predict(x_t, t, Condition.HEALTHY), dtype=float)
    return predict_x0(x_t, t, combine_guidance(eps_h, eps_null, w), schedule)


def ddim_jump(x_t, t: int, t_next: int, x0_hat, schedule: DiffusionSchedule) -> np.ndarray:
    eps_dir = (np.asarray(x_t, dtype=float) - schedule.sqrt_ab(t) * x0_hat) / schedule.sqrt_1m_ab(t)
    return schedule.sqrt_ab(t_next) * x0_hat + schedule.sqrt_1m_ab(t_next) * eps_dir


@dataclass(frozen=True)
class EncodingState:
    x_t: np.ndarray
    t: int
    x0_hat: np.ndarray | None = None


def ddim_encode_step(state: EncodingState, pred: NoisePredictor, schedule: DiffusionSchedule) -> EncodingState:
    """Deterministic move from ``x_t`` to ``x_{t+1}`` driven by the unguided prediction."""
    if not 1 <= state.t < schedule.T:
        raise ValueError(f"cannot encode past step {schedule.T} (at t={state.t})")
    x0_hat = one_step_prediction(state.x_t, state.t, pred, schedule)
    x_next = ddim_jump(state.x_t, state.t, state.t + 1, x0_hat, schedule)
    if not np.all(np.isfinite(x_next)):
        raise NumericFailure(state.t + 1)
    return EncodingState(x_t=x_next, t=state.t + 1, x0_hat=x0_hat)


def divergence(hgp, ugp) -> float:
    return mse(hgp, ugp)


def ddpm_sample_step(x_t, t: int, pred: NoisePredictor, schedule: DiffusionSchedule,
                     condition: Condition = Condition.NULL, w: float = 0.0,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}``; no noise is added at ``t = 1``."""
    schedule.check_step(t)
    x_t = np.asarray(x_t, dtype=float)
    eps_null = np.asarray(pred.predict(x_t, t, Condition.NULL), dtype=float)
    if Condition(condition) is Condition.NULL:
        eps = eps_null
    else:
        eps = combine_guidance(np.asarray(pred.predict(x_t, t, condition), dtype=float), eps_null, w)
    coef = schedule.beta[t] / schedule.sqrt_1m_ab(t)
    mean = (x_t - coef * eps) / np.sqrt(schedule.alpha[t])
    if t == 1:
        return mean
    if rng is None:
        raise ValueError("rng required for t > 1")
    return mean + np.sqrt(schedule.posterior_var[t]) * rng.standard_normal(x_t.shape)


def evaluated_steps(schedule: DiffusionSchedule, stride: int = 1, max_step: int | None = None) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    top = schedule.T if max_step is None else min(int(max_step), schedule.T)
    return np.arange(1, top + 1, int(stride))


@dataclass(frozen=True)
class StepRecord:
    t: int
    x_h: np.ndarray  # trajectory feeding the guided prediction
    x_null: np.ndarray  # trajectory feeding the unguided prediction
    eps_h: np.ndarray  # eps(x_h, healthy)
    eps_null_h: np.ndarray  # eps(x_h, null)
    eps_null: np.ndarray  # eps(x_null, null)


def _pair(pred: NoisePredictor, x_t, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Healthy and Null predictions at one point; uses a fused ``predict_pair`` when offered."""
    fused = getattr(pred, "predict_pair", None)
    if fused is not None:
        eps_h, eps_null = fused(x_t, t)
    else:
        eps_h, eps_null = pred.predict(x_t, t, Condition.HEALTHY), pred.predict(x_t, t, Condition.NULL)
    return np.asarray(eps_h, dtype=float), np.asarray(eps_null, dtype=float)


def walk(x0: np.ndarray, pred: NoisePredictor, schedule: DiffusionSchedule, encoding: Encoding,
         steps: Sequence[int], seeds: Sequence[int], drift: Drift = Drift.UNGUIDED,
         drift_w: float = 0.0) -> Iterator[StepRecord]:
    """Walk the trajectory for a batch ``x0`` of shape ``(N, H, W)``, yielding at ``steps``."""
    encoding = Encoding(encoding)
    drift = Drift(drift)
    steps = [int(t) for t in steps]
    if not steps:
        return
    wanted = set(steps)
    grid = x0.shape[1:]

    def noised(t):
        eps = np.stack([step_noise(s, t, grid) for s in seeds])
        return schedule.sqrt_ab(t) * x0 + schedule.sqrt_1m_ab(t) * eps

    def check(t, *arrays):
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NumericFailure(t)

    if encoding is Encoding.STOCHASTIC:
        for t in steps:
            x_t = noised(t)
            eps_h, eps_null = _pair(pred, x_t, t)
            check(t, eps_h, eps_null)
            yield StepRecord(t, x_t, x_t, eps_h, eps_null, eps_null)
        return

    shared = drift is Drift.UNGUIDED
    x_null = noised(1)
    x_h = x_null
    for t in range(1, max(steps) + 1):
        if shared:
            if t in wanted:
                eps_h, eps_null = _pair(pred, x_null, t)
            else:
                eps_h, eps_null = None, np.asarray(pred.predict(x_null, t, Condition.NULL), dtype=float)
            eps_null_h = eps_null
        else:
            eps_null = np.asarray(pred.predict(x_null, t, Condition.NULL), dtype=float)
            eps_h, eps_null_h = _pair(pred, x_h, t)
        check(t, eps_null, eps_null_h, *(() if eps_h is None else (eps_h,)))
        if t in wanted:
            yield StepRecord(t, x_h, x_null, eps_h, eps_null_h, eps_null)
        if t == schedule.T:
            break
        x_null_next = ddim_jump(x_null, t, t + 1, predict_x0(x_null, t, eps_null, schedule), schedule)
        if shared:
            x_h = x_null = x_null_next
        else:
            x0_h = predict_x0(x_h, t, combine_guidance(eps_h, eps_null_h, drift_w), schedule)
            x_h = ddim_jump(x_h, t, t + 1, x0_h, schedule)
            x_null = x_null_next
        check(t + 1, x_h, x_null)


def guided_errors(rec: StepRecord, x0: np.ndarray, w: float, schedule: DiffusionSchedule):
    """Return ``(hgp, ugp, err_h, err_null)`` for one step record."""
    hgp = predict_x0(rec.x_h, rec.t, combine_guidance(rec.eps_h, rec.eps_null_h, w), schedule)
    ugp = predict_x0(rec.x_null, rec.t, rec.eps_null, schedule)
    return hgp, ugp, hgp - x0, ugp - x0


@dataclass
class ForwardTrace:
    steps: np.ndarray
    m: np.ndarray
    mse_h: np.ndarray
    mse_null: np.ndarray
    w: float
    encoding: str
    seed: int
    stride: int
    err_h: np.ndarray | None = None
    err_null: np.ndarray | None = None

    @property
    def stored(self) -> bool:
        return self.err_h is not None

    def index_of(self, t: int) -> int:
        idx = np.searchsorted(self.steps, t)
        if idx >= len(self.steps) or self.steps[idx] != t:
            raise ValueError(f"step {t} was not evaluated")
        return int(idx)

    def sam(self, t: int) -> np.ndarray:
        if not self.stored:
            raise ValueError("trace holds no per-step errors (two-pass storage)")
        return self.err_h[self.index_of(t)] ** 2

    def rows(self):
        for t, m, h, n in zip(self.steps, self.m, self.mse_h, self.mse_null):
            yield int(t), float(m), float(h), float(n)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "M_t", "MSE_h", "MSE_null"])
            for t, m, h, n in self.rows():
                writer.writerow([t, repr(m), repr(h), repr(n)])


def _grid_sqmean(a: np.ndarray) -> np.ndarray:
    flat = a.reshape(a.shape[0], -1)
    return np.einsum("ij,ij->i", flat, flat) / flat.shape[1]


def sweep_multi(x0, pred: NoisePredictor, schedule: DiffusionSchedule, ws: Sequence[float],
                seeds: Sequence[int] | int, encoding: Encoding = Encoding.DETERMINISTIC,
                stride: int = 1, storage: Storage = Storage.STORE_ALL, max_step: int | None = None,
                drift: Drift = Drift.UNGUIDED, check_identities: bool = False) -> list[list[ForwardTrace]]:
    """Sweep a batch of inputs for several guidance strengths at once.

    Returns ``traces[i][j]`` for sample ``i`` and guidance ``ws[j]``. With a
    guided drift the trajectory depends on ``w``, so each strength gets its own walk.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 2:
        x0 = x0[None]
    n = x0.shape[0]
    seeds = [int(seeds)] * n if np.isscalar(seeds) else [int(s) for s in seeds]
    if len(seeds) != n:
        raise ValueError("one seed per sample required")
    ws = [float(w) for w in ws]
    storage = Storage(storage)
    drift = Drift(drift)
    encoding = Encoding(encoding)
    steps = evaluated_steps(schedule, stride, max_step)
    if drift is Drift.GUIDED and encoding is Encoding.DETERMINISTIC and len(ws) > 1:
        per_w = [sweep_multi(x0, pred, schedule, [w], seeds, encoding, stride, storage, max_step,
                             drift, check_identities) for w in ws]
        return [[per_w[j][i][0] for j in range(len(ws))] for i in range(n)]

    S = len(steps)
    m = np.zeros((len(ws), n, S))
    mse_h = np.zeros((len(ws), n, S))
    mse_null = np.zeros((n, S))
    keep = storage is Storage.STORE_ALL
    err_h = np.zeros((len(ws), n, S) + x0.shape[1:]) if keep else None
    err_null = np.zeros((n, S) + x0.shape[1:]) if keep else None
    drift_w = ws[0] if drift is Drift.GUIDED else 0.0
    for k, rec in enumerate(walk(x0, pred, schedule, encoding, steps, seeds, drift, drift_w)):
        t = rec.t
        ugp = predict_x0(rec.x_null, t, rec.eps_null, schedule)
        e_null = ugp - x0
        mse_null[:, k] = _grid_sqmean(e_null)
        if keep:
            err_null[:, k] = e_null
        for j, w in enumerate(ws):
            hgp = predict_x0(rec.x_h, t, combine_guidance(rec.eps_h, rec.eps_null_h, w), schedule)
            e_h = hgp - x0
            m[j, :, k] = _grid_sqmean(hgp - ugp)
            mse_h[j, :, k] = _grid_sqmean(e_h)
            if keep:
                err_h[j, :, k] = e_h
            if check_identities and rec.x_h is rec.x_null:
                dv = rec.eps_h - rec.eps_null
                alt = schedule.A[t] ** 2 * (1.0 + w) ** 2 * _grid_sqmean(dv)
                if not np.allclose(m[j, :, k], alt, rtol=1e-9, atol=1e-300):
                    raise NumericFailure(t, "divergence identity violated")
    out = []
    for i in range(n):
        row = []
        for j, w in enumerate(ws):
            row.append(ForwardTrace(
                steps=steps.copy(), m=m[j, i].copy(), mse_h=mse_h[j, i].copy(),
                mse_null=mse_null[i].copy(), w=w, encoding=encoding.value, seed=seeds[i],
                stride=int(stride),
                err_h=err_h[j, i] if keep else None,
                err_null=err_null[i] if keep else None,
            ))
        out.append(row)
    return out


def sweep(x0, pred: NoisePredictor, schedule: DiffusionSchedule, w: float, seed: int = 0,
          encoding: Encoding = Encoding.DETERMINISTIC, stride: int = 1,
          storage: Storage = Storage.STORE_ALL, max_step: int | None = None,
          drift: Drift = Drift.UNGUIDED, check_identities: bool = False) -> ForwardTrace:
    """Single-input sweep at guidance strength ``w``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 2:
        raise ValueError("sweep expects a single (H, W) grid; use sweep_multi for batches")
    return sweep_multi(x0, pred, schedule, [w], [seed], encoding, stride, storage, max_step,
                       drift, check_identities)[0][0]
