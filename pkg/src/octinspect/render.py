"""Box overlays on slices, written as binary PPM.

Ground truth is drawn in green (0, 255, 0) and predictions in red
(255, 0, 0), as 1-pixel outlines; predictions are drawn last.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .annotations import BoundingBox, to_absolute
from .netpbm import encode_ppm
from .volume_io import Volume

GT_COLOR = (0, 255, 0)
PRED_COLOR = (255, 0, 0)


def pixel_rect(box: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer pixel span (x0, y0, x1, y1), x1/y1 exclusive, at least one pixel wide."""
    r = to_absolute(box, width, height)
    x0 = min(int(math.floor(r.x0 + 0.5)), width - 1)
    y0 = min(int(math.floor(r.y0 + 0.5)), height - 1)
    x1 = max(int(math.floor(r.x1 + 0.5)), x0 + 1)
    y1 = max(int(math.floor(r.y1 + 0.5)), y0 + 1)
    return x0, y0, min(x1, width), min(y1, height)


def draw_outline(rgb: np.ndarray, rect, color) -> None:
    x0, y0, x1, y1 = rect
    rgb[y0, x0:x1] = color
    rgb[y1 - 1, x0:x1] = color
    rgb[y0:y1, x0] = color
    rgb[y0:y1, x1 - 1] = color


def gray_slice(volume: Volume, z: int) -> np.ndarray:
    pixels = volume.slice(z).pixels
    if volume.bit_depth == 16:
        return (pixels >> 8).astype(np.uint8)
    return np.array(pixels, dtype=np.uint8)


def render_overlay(volume: Volume, z: int, annotations: Iterable = (), predictions: Iterable = ()) -> bytes:
    gray = gray_slice(volume, z)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    for items, color in ((annotations, GT_COLOR), (predictions, PRED_COLOR)):
        for item in items:
            draw_outline(rgb, pixel_rect(item.box, volume.width, volume.height), color)
    return encode_ppm(rgb)
