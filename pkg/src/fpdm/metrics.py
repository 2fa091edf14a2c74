"""Pixel- and image-level evaluation metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    pass


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def dice(pred, truth) -> float:
    """2|A & B| / (|A| + |B|); two empty masks score 1."""
    pred, truth = _pair(pred, truth)
    denom = int(pred.sum()) + int(truth.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, truth).sum()) / denom


def iou(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    union = int(np.logical_or(pred, truth).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, truth).sum()) / union


def auprc(scores: Sequence[np.ndarray], truths: Sequence[np.ndarray],
          foregrounds: Sequence[np.ndarray] | None = None) -> float:
    """Area under the precision-recall curve over pooled foreground pixels.

    Thresholds sweep the distinct scores in descending order (tied scores enter
    together); the curve starts at (recall 0, precision of the top group) and
    is integrated with the trapezoid rule.
    """
    if foregrounds is None:
        foregrounds = [np.ones(np.shape(s), dtype=bool) for s in scores]
    if not (len(scores) == len(truths) == len(foregrounds)):
        raise ValueError("scores, truths and foregrounds must align")
    s_all, y_all = [], []
    for s, y, fg in zip(scores, truths, foregrounds):
        fg = np.asarray(fg, dtype=bool)
        s_all.append(np.asarray(s, dtype=float)[fg])
        y_all.append(np.asarray(y, dtype=bool)[fg])
    s = np.concatenate(s_all) if s_all else np.zeros(0)
    y = np.concatenate(y_all) if y_all else np.zeros(0, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC undefined without positive pixels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends].astype(float)
    fp = (ends + 1 - tp).astype(float)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two aligned series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.dot(dx, dx))
    sy = np.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise UndefinedMetricError("pearson undefined for a constant series")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def accuracy(pred_labels: Sequence[str], true_labels: Sequence[str]) -> float:
    if len(pred_labels) != len(true_labels) or not pred_labels:
        raise ValueError("need aligned nonempty label lists")
    return float(np.mean([p == t for p, t in zip(pred_labels, true_labels)]))


@dataclass
class SetupScores:
    dice: float
    iou: float
    auprc: float
    n: int


@dataclass
class EvalReport:
    mixed: SetupScores
    unhealthy: SetupScores
    accuracy: float
    pearson_size_m: float | None
    n_samples: int
    n_unhealthy: int
    config_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, json_path, csv_path) -> None:
        Path(json_path).write_text(self.to_json())
        with Path(csv_path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["setup", "dice", "iou", "auprc", "n"])
            for name in ("mixed", "unhealthy"):
                sc = getattr(self, name)
                wr.writerow([name, repr(sc.dice), repr(sc.iou), repr(sc.auprc), sc.n])
            wr.writerow(["accuracy", repr(self.accuracy), "", "", self.n_samples])
            wr.writerow(["pearson_size_m", repr(self.pearson_size_m), "", "", self.n_unhealthy])


def setup_scores(masks, truths, scores, foregrounds) -> SetupScores:
    """Per-sample mean DICE/IoU and pooled foreground AUPRC."""
    if not masks:
        return SetupScores(float("nan"), float("nan"), float("nan"), 0)
    d = float(np.mean([dice(m, t) for m, t in zip(masks, truths)]))
    j = float(np.mean([iou(m, t) for m, t in zip(masks, truths)]))
    try:
        a = auprc(scores, truths, foregrounds)
    except UndefinedMetricError:
        a = float("nan")
    return SetupScores(d, j, a, len(masks))
