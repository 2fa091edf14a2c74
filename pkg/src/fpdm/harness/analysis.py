"""Cohort-level diagnostics and ablation curves built on stored traces."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..forward import ForwardTrace
from ..metrics import dice
from ..numerics import connected_component_filter, median_filter
from ..schedule import DiffusionSchedule
from ..segmentation import SamMode, aggregate, aggregate_until
from ..selection import SelectionCalibration, select_end_step, select_quantile


@dataclass
class CohortItem:
    """One unhealthy sample with its store-all trace."""

    index: int
    trace: ForwardTrace
    lesion: np.ndarray
    foreground: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def area(self) -> int:
        return int(self.lesion.sum())

    @property
    def end_step(self) -> tuple[int, float]:
        return select_end_step(self.trace)


def sam_ratio_curve(trace: ForwardTrace, lesion: np.ndarray, foreground: np.ndarray) -> np.ndarray:
    """Mean full-mode SAM inside the lesion over the mean on healthy foreground, per evaluated step."""
    if not trace.stored:
        raise ValueError("ratio curve needs a store-all trace")
    healthy = foreground & ~lesion
    if not lesion.any() or not healthy.any():
        raise ValueError("need both lesion and healthy foreground pixels")
    sam = trace.err_h ** 2
    return sam[:, lesion].mean(axis=1) / sam[:, healthy].mean(axis=1)


def ratio_at_end_step(item: CohortItem) -> float:
    """Ratio at ``t_e`` as a fraction of the sample's own maximal ratio."""
    curve = sam_ratio_curve(item.trace, item.lesion, item.foreground)
    t_e, _ = item.end_step
    return float(curve[item.trace.index_of(t_e)] / curve.max())


def dynamic_mask(aam: np.ndarray, m_te: float, calib: SelectionCalibration, kernel: int = 5,
                 min_size: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Filtered map and final mask under the divergence-indexed quantile threshold."""
    filtered = median_filter(aam, kernel)
    q_star = select_quantile(m_te, calib, filtered)
    return filtered, connected_component_filter(filtered >= q_star, min_size)


def cohort_maps(items: Sequence[CohortItem], schedule: DiffusionSchedule, mode: SamMode = SamMode.FULL,
                multiplier: float = 1.0) -> list[np.ndarray]:
    """AAMs aggregated to ``multiplier * t_e`` (clamped to the last evaluated step)."""
    maps = []
    for it in items:
        t_e, _ = it.end_step
        if multiplier == 1.0:
            maps.append(aggregate(it.trace, t_e, mode, schedule))
        else:
            t_end = max(1, min(int(round(multiplier * t_e)), int(it.trace.steps[-1])))
            maps.append(aggregate_until(it.trace, t_end, mode, schedule))
    return maps


def dynamic_dice(items: Sequence[CohortItem], maps: Sequence[np.ndarray], calib: SelectionCalibration,
                 kernel: int = 5, min_size: int = 4) -> np.ndarray:
    out = []
    for it, aam in zip(items, maps):
        _, mask = dynamic_mask(aam, it.end_step[1], calib, kernel, min_size)
        out.append(dice(mask, it.lesion))
    return np.asarray(out)


def threshold_grid(filtered: Sequence[np.ndarray], n: int = 50) -> np.ndarray:
    """``n`` evenly spaced thresholds spanning the pooled filtered maps."""
    pooled = np.concatenate([np.ravel(f) for f in filtered])
    return np.linspace(pooled.min(), pooled.max(), n)


def fixed_threshold_curve(filtered: Sequence[np.ndarray], truths: Sequence[np.ndarray],
                          thresholds: Sequence[float], min_size: int = 4) -> np.ndarray:
    """Mean DICE for each global threshold applied to already-filtered maps."""
    return np.asarray([
        np.mean([dice(connected_component_filter(f >= thr, min_size), y) for f, y in zip(filtered, truths)])
        for thr in thresholds
    ])
