"""Grid utilities shared by the pipeline.

Grids are plain ``numpy`` arrays of shape ``(H, W)``; masks are boolean arrays
of the same shape.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .schedule import ConfigurationError

# Edge handling for the median filter: scipy "reflect" mirrors about the edge,
# repeating the border pixel (d c b a | a b c d).
MEDIAN_PAD_MODE = "reflect"
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class UndefinedSimilarityError(ValueError):
    pass


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    """Squared L2 distance divided by the number of elements."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _same_shape(a, b)
    diff = a - b
    return float(np.vdot(diff, diff) / diff.size)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size == 0 or u.shape != v.shape:
        raise ValueError(f"need equal nonempty lengths, got {u.size} and {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def quantile(grid, q: float) -> float:
    """Linear-interpolation quantile over every value of ``grid``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level {q} outside [0, 1]")
    values = np.asarray(grid, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("quantile of an empty grid")
    return float(np.quantile(values, q, method="linear"))


def median_filter(grid, kernel: int = 5) -> np.ndarray:
    if int(kernel) != kernel or kernel < 1 or kernel % 2 == 0:
        raise ConfigurationError(f"median kernel must be a positive odd integer, got {kernel!r}")
    grid = np.asarray(grid, dtype=float)
    if kernel == 1:
        return grid.copy()
    return ndimage.median_filter(grid, size=int(kernel), mode=MEDIAN_PAD_MODE)


def connected_component_filter(mask, min_size: int) -> np.ndarray:
    """Drop 8-connected components with fewer than ``min_size`` pixels."""
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if min_size <= 1:
        return mask.copy()
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]
