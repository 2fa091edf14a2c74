"""Noise-predictor contract, classifier-free guidance, and the exact mixture oracle."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from .schedule import DiffusionSchedule


class Condition(enum.IntEnum):
    HEALTHY = 0
    UNHEALTHY = 1
    NULL = 2


class NoisePredictor(Protocol):
    """``predict`` maps a noised grid (or a batch ``(N, H, W)``) to a noise field."""

    def predict(self, x_t: np.ndarray, t: int, condition: Condition) -> np.ndarray: ...


def guided_noise(pred: NoisePredictor, x_t, t: int, label: Condition, w: float) -> np.ndarray:
    if Condition(label) is Condition.NULL:
        raise ValueError("guidance label must be HEALTHY or UNHEALTHY")
    eps_c = np.asarray(pred.predict(x_t, t, label), dtype=float)
    eps_null = np.asarray(pred.predict(x_t, t, Condition.NULL), dtype=float)
    return combine_guidance(eps_c, eps_null, w)


def combine_guidance(eps_cond: np.ndarray, eps_null: np.ndarray, w: float) -> np.ndarray:
    return (1.0 + w) * eps_cond - w * eps_null


def implicit_classifier_gradient(pred: NoisePredictor, x_t, t: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Gradient of log p(healthy | x_t), recovered from the two noise predictions."""
    schedule.check_step(t)
    eps_h = np.asarray(pred.predict(x_t, t, Condition.HEALTHY), dtype=float)
    eps_null = np.asarray(pred.predict(x_t, t, Condition.NULL), dtype=float)
    return (eps_null - eps_h) / schedule.sqrt_1m_ab(t)


@dataclass(frozen=True)
class GaussianMixtureOracle:
    """Two-class diagonal Gaussian data model with closed-form noised scores.

    ``means`` and ``variances`` have shape ``(2, *grid_shape)``; row 0 is the
    healthy class, row 1 the unhealthy class.
    """

    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        variances = np.broadcast_to(np.asarray(self.variances, dtype=float), means.shape).copy()
        priors = np.asarray(self.priors, dtype=float)
        if means.shape[0] != 2 or priors.shape != (2,):
            raise ValueError("oracle needs exactly two classes")
        if np.any(variances <= 0):
            raise ValueError("oracle variances must be positive")
        if np.any(priors <= 0) or not np.isclose(priors.sum(), 1.0, rtol=0, atol=1e-12):
            raise ValueError("oracle priors must be positive and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "priors", priors)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.means.shape[1:]

    def _axes(self, x: np.ndarray) -> tuple[int, ...]:
        nd = len(self.grid_shape)
        return tuple(range(x.ndim - nd, x.ndim))

    def marginal(self, ab: float, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel mean and variance of x_t given class ``k``."""
        return np.sqrt(ab) * self.means[k], ab * self.variances[k] + (1.0 - ab)

    def class_log_density(self, x_t, ab: float, k: int) -> np.ndarray:
        x = np.asarray(x_t, dtype=float)
        m, v = self.marginal(ab, k)
        ll = -0.5 * ((x - m) ** 2 / v + np.log(2.0 * np.pi * v))
        return ll.sum(axis=self._axes(x))

    def log_density(self, x_t, ab: float) -> np.ndarray:
        parts = [np.log(self.priors[k]) + self.class_log_density(x_t, ab, k) for k in (0, 1)]
        return logsumexp(np.stack(parts), axis=0)

    def responsibilities(self, x_t, ab: float) -> np.ndarray:
        """Posterior class probabilities, shape ``(2, *batch)``."""
        parts = np.stack(
            [np.log(self.priors[k]) + self.class_log_density(x_t, ab, k) for k in (0, 1)]
        )
        return np.exp(parts - logsumexp(parts, axis=0))

    def class_score(self, x_t, ab: float, k: int) -> np.ndarray:
        m, v = self.marginal(ab, k)
        return -(np.asarray(x_t, dtype=float) - m) / v

    def score(self, x_t, ab: float, condition: Condition) -> np.ndarray:
        condition = Condition(condition)
        if condition is not Condition.NULL:
            return self.class_score(x_t, ab, int(condition))
        x = np.asarray(x_t, dtype=float)
        r = self.responsibilities(x, ab)
        expand = (Ellipsis,) + (None,) * len(self.grid_shape)
        return r[0][expand] * self.class_score(x, ab, 0) + r[1][expand] * self.class_score(x, ab, 1)

    def sample(self, rng: np.random.Generator, k: int, n: int | None = None) -> np.ndarray:
        shape = self.grid_shape if n is None else (n, *self.grid_shape)
        return self.means[k] + np.sqrt(self.variances[k]) * rng.standard_normal(shape)


def oracle_predict_noise(oracle: GaussianMixtureOracle, schedule: DiffusionSchedule, x_t, t: int,
                         condition: Condition) -> np.ndarray:
    """Exact noise prediction: minus sqrt(1 - alpha_bar) times the noised score."""
    schedule.check_step(t)
    ab = float(schedule.alpha_bar[t])
    return -np.sqrt(1.0 - ab) * oracle.score(x_t, ab, condition)


@dataclass(frozen=True)
class OracleBackend:
    """Adapts a mixture oracle to the :class:`NoisePredictor` contract."""

    oracle: GaussianMixtureOracle
    schedule: DiffusionSchedule

    def predict(self, x_t, t: int, condition: Condition) -> np.ndarray:
        return oracle_predict_noise(self.oracle, self.schedule, x_t, t, condition)
