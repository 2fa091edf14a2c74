"""Linear variance schedule and the per-step coefficients derived from it.

Every array is indexed directly by the step ``t`` and has length ``T + 1``;
entry 0 holds the ``t = 0`` convention (``alpha_bar[0] == 1``, all noise
coefficients zero).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid schedule or pipeline configuration."""


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    posterior_var: np.ndarray = field(repr=False)

    def sqrt_ab(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar[t]))

    def sqrt_1m_ab(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar[t]))

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.T).tobytes())
        h.update(np.ascontiguousarray(self.beta, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def make_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    """Build a schedule with ``beta`` linearly spaced over steps ``1..T`` inclusive."""
    if int(T) != T or T < 1:
        raise ConfigurationError(f"T must be a positive integer, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start!r}, {beta_end!r}"
        )
    T = int(T)
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # alpha[0] == 1 so alpha_bar[0] == 1 falls out of the product.
    one_m = 1.0 - alpha_bar
    sq = np.sqrt(alpha_bar)
    A = np.sqrt(one_m) / sq
    B = one_m / sq
    post = np.zeros(T + 1)
    post[1:] = one_m[:-1] / one_m[1:] * beta[1:]
    for arr in (beta, alpha, alpha_bar, A, B, post):
        arr.setflags(write=False)
    return DiffusionSchedule(
        T=T,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        A=A,
        B=B,
        posterior_var=post,
    )
