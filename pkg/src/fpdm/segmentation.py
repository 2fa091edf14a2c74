"""Sub-anomaly-map aggregation, postprocessing, full segmentation, and the reconstruction baseline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .forward import (
    Drift,
    Encoding,
    ForwardTrace,
    Storage,
    predict_x0,
    ddpm_sample_step,
    sweep_multi,
    walk,
)
from .numerics import connected_component_filter, median_filter
from .schedule import DiffusionSchedule
from .score import Condition, NoisePredictor, combine_guidance
from .selection import (
    HEALTHY,
    SelectionCalibration,
    classify,
    cosine_score,
    select_end_step,
    select_quantile,
)


class SamMode(str, enum.Enum):
    FULL = "full"  # squared guided error, averaged up to t_e
    ENDSTEP = "endstep"  # squared guided error at t_e only
    GRAD = "grad"  # squared implicit-classifier gradient, averaged
    WGRAD = "wgrad"  # gradient weighted by B_t (1 + w), squared, averaged


def sam_for_mode(err_h: np.ndarray, err_null: np.ndarray, t: int, w: float,
                 schedule: DiffusionSchedule, mode: SamMode) -> np.ndarray:
    mode = SamMode(mode)
    if mode in (SamMode.FULL, SamMode.ENDSTEP):
        return err_h ** 2
    # err_h - err_null = B_t (1 + w) * grad log p(h | x_t)
    diff = err_h - err_null
    if mode is SamMode.WGRAD:
        return diff ** 2
    return (diff / (schedule.B[t] * (1.0 + w))) ** 2


def aggregate(trace: ForwardTrace, t_e: int, mode: SamMode, schedule: DiffusionSchedule,
              w: float | None = None) -> np.ndarray:
    """Mean of the mode's sub-anomaly maps over evaluated steps ``<= t_e``."""
    i_end = trace.index_of(t_e)
    return _aggregate_to_index(trace, i_end, mode, schedule, trace.w if w is None else w)


def aggregate_until(trace: ForwardTrace, t_end: int, mode: SamMode, schedule: DiffusionSchedule,
                    w: float | None = None) -> np.ndarray:
    """Like :func:`aggregate` but ``t_end`` need not be an evaluated step."""
    i_end = int(np.searchsorted(trace.steps, t_end, side="right")) - 1
    if i_end < 0:
        raise ValueError(f"no evaluated step <= {t_end}")
    return _aggregate_to_index(trace, i_end, mode, schedule, trace.w if w is None else w)


def _aggregate_to_index(trace: ForwardTrace, i_end: int, mode: SamMode,
                        schedule: DiffusionSchedule, w: float) -> np.ndarray:
    if not trace.stored:
        raise ValueError("trace holds no per-step errors; use replay_aggregate")
    mode = SamMode(mode)
    if mode is SamMode.ENDSTEP:
        t = int(trace.steps[i_end])
        return sam_for_mode(trace.err_h[i_end], trace.err_null[i_end], t, w, schedule, mode)
    acc = np.zeros(trace.err_h.shape[1:])
    for i in range(i_end + 1):
        t = int(trace.steps[i])
        acc = acc + sam_for_mode(trace.err_h[i], trace.err_null[i], t, w, schedule, mode)
    return acc / (i_end + 1)


def replay_aggregate(x0, pred: NoisePredictor, schedule: DiffusionSchedule, trace: ForwardTrace,
                     t_e: int, mode: SamMode, drift: Drift = Drift.UNGUIDED) -> np.ndarray:
    """Second pass of two-pass storage: re-walk the trajectory up to ``t_e`` and aggregate.

    The walk replays the same seeded noise, so the result is bit-identical to
    aggregating a store-all trace.
    """
    mode = SamMode(mode)
    x0 = np.asarray(x0, dtype=float)[None]
    steps = [int(s) for s in trace.steps[: trace.index_of(t_e) + 1]]
    w = trace.w
    acc = np.zeros(x0.shape[1:])
    count = 0
    for rec in walk(x0, pred, schedule, trace.encoding, steps, [trace.seed], drift, w):
        hgp = predict_x0(rec.x_h, rec.t, combine_guidance(rec.eps_h, rec.eps_null_h, w), schedule)
        ugp = predict_x0(rec.x_null, rec.t, rec.eps_null, schedule)
        s = sam_for_mode((hgp - x0)[0], (ugp - x0)[0], rec.t, w, schedule, mode)
        if mode is SamMode.ENDSTEP:
            if rec.t == t_e:
                return s
            continue
        acc = acc + s
        count += 1
    return acc / count


def postprocess(aam, q_star: float, kernel: int = 5, min_size: int = 4) -> np.ndarray:
    """Median filter, threshold inclusively at ``q_star``, drop small components."""
    return connected_component_filter(median_filter(aam, kernel) >= q_star, min_size)


@dataclass(frozen=True)
class SegmentOptions:
    encoding: Encoding = Encoding.DETERMINISTIC
    stride: int = 1
    mode: SamMode = SamMode.FULL
    storage: Storage = Storage.STORE_ALL
    max_step: int | None = None
    median_kernel: int = 5
    min_size: int = 4
    drift: Drift = Drift.UNGUIDED


@dataclass
class SegmentationResult:
    aam: np.ndarray
    filtered: np.ndarray
    q_star: float
    raw_mask: np.ndarray
    mask: np.ndarray
    verdict: str
    score: float
    t_e: int
    m_te: float
    trace: ForwardTrace | None = field(default=None, repr=False)


def finish_segmentation(trace: ForwardTrace, calib: SelectionCalibration, schedule: DiffusionSchedule,
                        options: SegmentOptions, aam: np.ndarray | None = None,
                        gate: bool = True) -> SegmentationResult:
    """Classification, end-step selection, aggregation, thresholding and postprocessing for one trace.

    With ``gate`` a healthy verdict yields all-zero maps. ``gate=False`` segments
    regardless of the verdict, which is what the unhealthy-only setup needs.
    """
    score = cosine_score(trace)
    verdict = classify(score, calib)
    t_e, m_te = select_end_step(trace)
    shape = trace.err_h.shape[1:] if trace.stored else np.shape(aam)
    if gate and verdict == HEALTHY:
        zero = np.zeros(shape)
        empty = np.zeros(shape, dtype=bool)
        return SegmentationResult(zero, zero.copy(), float("nan"), empty, empty.copy(), verdict,
                                  score, t_e, m_te, trace)
    if aam is None:
        aam = aggregate(trace, t_e, options.mode, schedule)
    filtered = median_filter(aam, options.median_kernel)
    q_star = select_quantile(m_te, calib, filtered)
    raw = filtered >= q_star
    mask = connected_component_filter(raw, options.min_size)
    return SegmentationResult(aam, filtered, q_star, raw, mask, verdict, score, t_e, m_te, trace)


def segment_batch(x0s, pred: NoisePredictor, schedule: DiffusionSchedule, calib: SelectionCalibration,
                  options: SegmentOptions, seeds, gate: bool = True) -> list[SegmentationResult]:
    x0s = np.asarray(x0s, dtype=float)
    traces = sweep_multi(x0s, pred, schedule, [calib.w_star], seeds, options.encoding, options.stride,
                         options.storage, options.max_step, options.drift)
    out = []
    for x0, row in zip(x0s, traces):
        trace = row[0]
        aam = None
        if not trace.stored and (not gate or classify(cosine_score(trace), calib) != HEALTHY):
            t_e, _ = select_end_step(trace)
            aam = replay_aggregate(x0, pred, schedule, trace, t_e, options.mode, options.drift)
        if not trace.stored and aam is None:
            aam = np.zeros(x0.shape)  # gated out; only its shape is used
        out.append(finish_segmentation(trace, calib, schedule, options, aam, gate))
    return out


def segment(x0, pred: NoisePredictor, schedule: DiffusionSchedule, calib: SelectionCalibration,
            options: SegmentOptions = SegmentOptions(), seed: int = 0, gate: bool = True) -> SegmentationResult:
    return segment_batch(np.asarray(x0, dtype=float)[None], pred, schedule, calib, options, [seed], gate)[0]


def reconstruction_baseline(x0, pred: NoisePredictor, schedule: DiffusionSchedule, noise_scale: int,
                            rng: np.random.Generator, condition: Condition = Condition.NULL,
                            w: float = 0.0) -> np.ndarray:
    """Noise ``x0`` to ``noise_scale``, denoise ancestrally back to 0, return ``|x0 - recon|``.

    Works on a single grid or a batch ``(N, H, W)``.
    """
    schedule.check_step(noise_scale)
    x0 = np.asarray(x0, dtype=float)
    ab = schedule.alpha_bar[noise_scale]
    x = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)
    for t in range(noise_scale, 0, -1):
        x = ddpm_sample_step(x, t, pred, schedule, condition, w, rng)
    return np.abs(x0 - x)

