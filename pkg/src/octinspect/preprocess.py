"""Slice conditioning: min-max normalization, median filtering, surface finding.

Float slices are plain ``float64`` arrays of shape (height, width).
"""

from __future__ import annotations

import cv2
import numpy as np
from scipy import ndimage

from .errors import BadKernel
from .volume_io import SliceView

# marks columns in which no material interface was found
NO_SURFACE = -1


def _pixels(s) -> np.ndarray:
    return s.pixels if isinstance(s, SliceView) else np.asarray(s)


def normalize(s) -> np.ndarray:
    """Linear stretch so the slice minimum maps to 0 and its maximum to 1.

    A constant slice maps to all zeros.
    """
    a = _pixels(s).astype(np.float64)
    lo = a.min()
    hi = a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def _check_kernel(shape, k: int) -> None:
    if k < 1 or k % 2 == 0 or k > min(shape):
        raise BadKernel(f"kernel {k} must be odd and in [1, {min(shape)}]")


def median_filter_levels(levels: np.ndarray, k: int) -> np.ndarray:
    """k x k median of a non-negative integer image, replicating the border."""
    _check_kernel(levels.shape, k)
    if k == 1:
        return levels.copy()
    if levels.dtype == np.uint8:
        return cv2.medianBlur(levels, k)
    if int(levels.max()) < 256:
        return cv2.medianBlur(levels.astype(np.uint8), k).astype(levels.dtype)
    return ndimage.median_filter(levels, size=k, mode="nearest")


def median_filter(s, k: int = 3) -> np.ndarray:
    """k x k median with replicated borders.

    The median only depends on ranks, so values are mapped to their rank
    among the distinct slice values, filtered as integers, and mapped back.
    The result is bit-exact.
    """
    a = np.asarray(_pixels(s), dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("median_filter needs a 2D slice")
    _check_kernel(a.shape, k)
    if k == 1:
        return a.copy()
    values, ranks = np.unique(a, return_inverse=True)
    dtype = np.uint8 if len(values) <= 256 else np.int64
    ranks = ranks.reshape(a.shape).astype(dtype)
    return values[median_filter_levels(ranks, k)]


def find_surface(s, theta: float = 0.35) -> np.ndarray:
    """Per column, the first row whose value reaches ``theta``.

    Columns that never reach it hold ``NO_SURFACE``.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta {theta} must lie in (0, 1)")
    a = np.asarray(_pixels(s))
    hit = a >= theta
    rows = hit.argmax(axis=0).astype(np.int64)
    rows[~hit.any(axis=0)] = NO_SURFACE
    return rows
