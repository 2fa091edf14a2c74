"""Guidance, end-step and quantile selection, plus validation calibration."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .forward import ForwardTrace
from .numerics import cosine_similarity, quantile
from .phantom import atomic_write_bytes

HEALTHY = "healthy"
UNHEALTHY = "unhealthy"


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionCalibration:
    w_star: float
    cos_threshold: float
    m_max: float
    a: float = 0.90
    b: float = 0.98
    rho: float = 0.98
    schedule_fingerprint: str = ""

    def __post_init__(self):
        if not 0.0 <= self.a < self.b <= 1.0:
            raise CalibrationError(f"need 0 <= a < b <= 1, got a={self.a}, b={self.b}")
        if not self.m_max > 0:
            raise CalibrationError(f"m_max must be positive, got {self.m_max}")
        if not 0.0 < self.rho <= 1.0:
            raise CalibrationError(f"rho must lie in (0, 1], got {self.rho}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path) -> None:
        atomic_write_bytes(path, self.to_json().encode())

    @classmethod
    def load(cls, path) -> "SelectionCalibration":
        return cls(**json.loads(Path(path).read_text()))


def cosine_score(trace: ForwardTrace) -> float:
    if len(trace.steps) < 2:
        raise ValueError("cosine score needs at least two evaluated steps")
    return cosine_similarity(trace.mse_h, trace.mse_null)


def classify(score: float, calib: SelectionCalibration | float) -> str:
    """Unhealthy iff the score falls strictly below the threshold."""
    thr = calib.cos_threshold if isinstance(calib, SelectionCalibration) else float(calib)
    return UNHEALTHY if score < thr else HEALTHY


def best_threshold(scores: Sequence[float], labels: Sequence[str]) -> tuple[float, float]:
    """Threshold maximizing accuracy over midpoints of sorted scores; ties go to the higher one."""
    scores = np.asarray(scores, dtype=float)
    is_unhealthy = np.array([lab == UNHEALTHY for lab in labels])
    if is_unhealthy.all() or not is_unhealthy.any():
        raise CalibrationError("validation needs both healthy and unhealthy samples")
    uniq = np.unique(scores)
    cands = (uniq[:-1] + uniq[1:]) / 2.0 if uniq.size > 1 else uniq
    best_acc, best_thr = -1.0, float(cands[0])
    for thr in cands:
        acc = float(np.mean((scores < thr) == is_unhealthy))
        if acc >= best_acc:
            best_acc, best_thr = acc, float(thr)
    return best_thr, best_acc


@dataclass(frozen=True)
class GuidanceCurve:
    candidates: tuple[float, ...]
    thresholds: tuple[float, ...]
    accuracies: tuple[float, ...]
    w_star: float
    cos_threshold: float


def select_guidance(candidates: Sequence[float], validation: Sequence[Sequence[float]],
                    labels: Sequence[str], rho: float = 0.98) -> GuidanceCurve:
    """Pick the largest candidate above the accuracy maximizer that keeps ``acc >= rho * best``.

    ``validation[i]`` holds the cosine scores of every validation sample for
    ``candidates[i]``; ``labels`` are the shared image-level labels.
    """
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("no guidance candidates")
    if any(b < a for a, b in zip(cands, cands[1:])):
        raise ValueError("guidance candidates must be sorted ascending")
    if len(validation) != len(cands):
        raise ValueError("one score list per candidate required")
    fits = [best_threshold(scores, labels) for scores in validation]
    accs = [acc for _, acc in fits]
    i_best = int(np.argmax(accs))
    chosen = i_best
    for i in range(i_best + 1, len(cands)):
        if accs[i] >= rho * accs[i_best]:
            chosen = i
    return GuidanceCurve(
        candidates=tuple(cands),
        thresholds=tuple(thr for thr, _ in fits),
        accuracies=tuple(accs),
        w_star=cands[chosen],
        cos_threshold=fits[chosen][0],
    )


def select_end_step(trace: ForwardTrace) -> tuple[int, float]:
    """Argmax of the divergence over evaluated steps; the earliest step wins ties."""
    if len(trace.steps) == 0:
        raise ValueError("empty trace")
    i = int(np.argmax(trace.m))
    return int(trace.steps[i]), float(trace.m[i])


def quantile_levels(a: float, b: float) -> np.ndarray:
    return np.linspace(a, b, 101)[::-1]


def quantile_index(m_te: float, m_max: float) -> int:
    m_s = min(max(m_te / m_max, 0.0), 1.0)
    index = int(Decimal(m_s).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP) * 100)
    assert 0 <= index <= 100, index
    return index


def quantile_level(m_te: float, calib: SelectionCalibration) -> float:
    return float(quantile_levels(calib.a, calib.b)[quantile_index(m_te, calib.m_max)])


def select_quantile(m_te: float, calib: SelectionCalibration, aam) -> float:
    return quantile(aam, quantile_level(m_te, calib))


def calibrate_m_max(validation) -> float:
    """Largest end-step divergence over all validation traces (or raw ``m_te`` values)."""
    vals = [select_end_step(v)[1] if isinstance(v, ForwardTrace) else float(v) for v in validation]
    if not vals:
        raise CalibrationError("empty validation set")
    return float(max(vals))
