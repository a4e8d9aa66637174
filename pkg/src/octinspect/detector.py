"""Classical baseline defect detector.

Each slice is normalized, its background is estimated with a wide median
filter, and pixels whose residual exceeds ``z_thresh`` standard deviations
are grouped into connected components.  Components are labeled with a fixed
priority: near the material surface -> surface irregularity, elongated ->
crack, brighter than background -> agglomerate, otherwise void.

Confidence is ``1 - exp(-|mean residual| / (z_thresh * sigma))``.  It is a
monotone score for ranking, not a calibrated probability.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from .annotations import BoundingBox, DefectClass, Prediction, Rect
from .errors import BadConfig
from .preprocess import NO_SURFACE, find_surface, median_filter, median_filter_levels, normalize
from .volume_io import SliceView, Volume


@dataclass(frozen=True)
class DetectorConfig:
    median_k: int = 3
    bg_k: int = 31
    z_thresh: float = 3.0
    min_area: int = 9
    connectivity: int = 8
    surface_band: int = 6
    crack_elongation: float = 4.0
    surface_theta: float = 0.35

    def __post_init__(self):
        for name in ("median_k", "bg_k"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise BadConfig(f"{name}={k} must be a positive odd integer")
        if not self.z_thresh > 0:
            raise BadConfig(f"z_thresh={self.z_thresh} must be > 0")
        if self.min_area < 1:
            raise BadConfig(f"min_area={self.min_area} must be >= 1")
        if self.connectivity not in (4, 8):
            raise BadConfig(f"connectivity={self.connectivity} must be 4 or 8")
        if self.surface_band < 0:
            raise BadConfig(f"surface_band={self.surface_band} must be >= 0")
        if self.crack_elongation < 1:
            raise BadConfig(f"crack_elongation={self.crack_elongation} must be >= 1")
        if not 0 < self.surface_theta < 1:
            raise BadConfig(f"surface_theta={self.surface_theta} must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class Component:
    pixels: np.ndarray  # (area, 2) array of (row, col)
    area: int
    bbox: Rect  # integer pixel edges, x1/y1 exclusive
    mean_residual: float
    elongation: float
    touches_surface: bool = False


def anomaly_map(s, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Signed residual ``s - median_filter(s, bg_k)``; dark defects are negative."""
    s = np.asarray(s, dtype=np.float64)
    return s - median_filter(s, cfg.bg_k)


def _conditioned(pixels: np.ndarray, cfg: DetectorConfig):
    """Normalized slice, residual and surface profile of a raw slice.

    For 8-bit input the median runs on the integer levels and is mapped
    through the same affine stretch as ``normalize``; the median picks an
    element, so the result is bitwise identical to filtering the float slice.
    """
    if pixels.dtype != np.uint8:
        s = normalize(pixels)
        res = anomaly_map(s, cfg)
        surface = find_surface(median_filter(s, cfg.median_k), cfg.surface_theta)
        return s, res, surface
    lo = float(pixels.min())
    hi = float(pixels.max())
    if hi == lo:
        zeros = np.zeros(pixels.shape)
        return zeros, zeros.copy(), find_surface(zeros, cfg.surface_theta)
    span = hi - lo
    s = (pixels.astype(np.float64) - lo) / span
    bg = (median_filter_levels(pixels, cfg.bg_k).astype(np.float64) - lo) / span
    smooth = (median_filter_levels(pixels, cfg.median_k).astype(np.float64) - lo) / span
    return s, s - bg, find_surface(smooth, cfg.surface_theta)


def estimate_surface(s, cfg: DetectorConfig = DetectorConfig()) -> np.ndarray:
    """Surface profile of a slice after speckle suppression with ``median_k``."""
    if isinstance(s, SliceView):
        return _conditioned(np.asarray(s.pixels), cfg)[2]
    return find_surface(median_filter(normalize(s), cfg.median_k), cfg.surface_theta)


def baseline_surface(surface: np.ndarray, k: int) -> np.ndarray:
    """Surface profile with local bumps removed by a 1D median of width ``k``.

    Columns without a surface keep ``NO_SURFACE``; they are filled from their
    neighbours before filtering.
    """
    surface = np.asarray(surface)
    valid = surface != NO_SURFACE
    if not valid.any():
        return surface.copy()
    cols = np.arange(len(surface))
    filled = np.interp(cols, cols[valid], surface[valid]).round().astype(np.int64)
    k = min(k, len(surface) - (1 - len(surface) % 2))
    base = ndimage.median_filter(filled, size=max(k, 1), mode="nearest")
    return np.where(valid, base, NO_SURFACE)


def suppress_air(res: np.ndarray, surface: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    """Zero negative residuals above the interface.

    Air is darker than material by construction, so next to a surface bump
    the wide median leaves dark lobes in the air that are not defects.
    """
    top = np.where((surface == NO_SURFACE) | (baseline == NO_SURFACE), -1,
                   np.minimum(surface, baseline))
    rows = np.arange(res.shape[0])[:, None]
    return np.where((rows < top[None, :]) & (res < 0), 0.0, res)


def _surface_box(bbox: Rect, surface: np.ndarray, baseline: np.ndarray) -> Rect:
    """Grow a surface-class box to span the interface and its baseline in its columns."""
    x0, y0, x1, y1 = (int(v) for v in bbox)
    cols = slice(x0, x1)
    s, b = surface[cols], baseline[cols]
    ok = (s != NO_SURFACE) & (b != NO_SURFACE) & (s != b)
    if not ok.any():
        return bbox
    lo = int(np.minimum(s, b)[ok].min())
    hi = int(np.maximum(s, b)[ok].max())
    return Rect(x0, min(y0, lo), x1, max(y1, hi))


def touches_surface(bbox: Rect, surface: np.ndarray, band: int) -> bool:
    """True when the surface lies within ``band`` rows of the box in any of its columns."""
    x0, y0, x1, y1 = (int(v) for v in bbox)
    rows = np.asarray(surface)[x0:x1]
    rows = rows[rows != NO_SURFACE]
    return bool(np.any((rows >= y0 - band) & (rows <= y1 - 1 + band)))


def _elongation(ys: np.ndarray, xs: np.ndarray) -> float:
    # each pixel counts as a unit square (variance 1/12 per axis), so a solid
    # L x W rectangle has elongation exactly L / W and a single pixel has 1
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(np.mean(dx * dx)) + 1 / 12
    syy = float(np.mean(dy * dy)) + 1 / 12
    sxy = float(np.mean(dx * dy))
    half_tr = (sxx + syy) / 2
    disc = math.sqrt(max(((sxx - syy) / 2) ** 2 + sxy * sxy, 0.0))
    return math.sqrt((half_tr + disc) / (half_tr - disc))


def residual_sigma(res: np.ndarray) -> float:
    return float(np.asarray(res).std())


def threshold_components(res, cfg: DetectorConfig = DetectorConfig(), *,
                         sigma: float | None = None,
                         surface: np.ndarray | None = None) -> list[Component]:
    """Connected components of pixels with ``|res| >= z_thresh * sigma``.

    Dark and bright pixels are labeled separately so every component has a
    single residual sign.  Components smaller than ``min_area`` are dropped;
    the rest are sorted by area (descending), then bbox x0, then y0.
    """
    res = np.asarray(res, dtype=np.float64)
    if sigma is None:
        sigma = residual_sigma(res)
    if not sigma > 0:
        return []
    thr = cfg.z_thresh * sigma
    structure = ndimage.generate_binary_structure(2, 1 if cfg.connectivity == 4 else 2)
    comps = []
    for mask in (res <= -thr, res >= thr):
        labels, n = ndimage.label(mask, structure)
        if n == 0:
            continue
        areas = np.bincount(labels.ravel(), minlength=n + 1)
        objects = ndimage.find_objects(labels)
        for lab in np.nonzero(areas[1:] >= cfg.min_area)[0] + 1:
            rs, cs = objects[lab - 1]
            ys, xs = np.nonzero(labels[rs, cs] == lab)
            ys = ys + rs.start
            xs = xs + cs.start
            bbox = Rect(int(cs.start), int(rs.start), int(cs.stop), int(rs.stop))
            comps.append(Component(
                pixels=np.stack([ys, xs], axis=1),
                area=int(areas[lab]),
                bbox=bbox,
                mean_residual=float(res[ys, xs].mean()),
                elongation=_elongation(ys, xs),
                touches_surface=(surface is not None
                                 and touches_surface(bbox, surface, cfg.surface_band)),
            ))
    comps.sort(key=lambda c: (-c.area, c.bbox.x0, c.bbox.y0, c.bbox.x1, c.bbox.y1, c.mean_residual))
    return comps


def classify_component(c: Component, surface: np.ndarray | None,
                       cfg: DetectorConfig = DetectorConfig()) -> DefectClass:
    near_surface = (touches_surface(c.bbox, surface, cfg.surface_band)
                    if surface is not None else c.touches_surface)
    if near_surface:
        return DefectClass.SURFACE_IRREGULARITY
    if c.elongation >= cfg.crack_elongation:
        return DefectClass.CRACK
    if c.mean_residual > 0:
        return DefectClass.AGGLOMERATE
    return DefectClass.VOID


def confidence(mean_residual: float, threshold: float) -> float:
    return 1.0 - math.exp(-abs(mean_residual) / threshold)


def detect_slice(slice_, surface: np.ndarray | None = None,
                 cfg: DetectorConfig = DetectorConfig(), *, z: int | None = None) -> list[Prediction]:
    """Detect defects on one slice.

    ``slice_`` is a SliceView or a raw 2D intensity array (then ``z`` sets the
    slice index, default 0).  When ``surface`` is None it is estimated from the
    slice itself.
    """
    if isinstance(slice_, SliceView):
        pixels = np.asarray(slice_.pixels)
        z = slice_.z if z is None else z
    else:
        pixels = np.asarray(slice_)
        z = 0 if z is None else z
    height, width = pixels.shape
    _, res, own_surface = _conditioned(pixels, cfg)
    if surface is None:
        surface = own_surface
    baseline = baseline_surface(surface, cfg.bg_k)
    res = suppress_air(res, surface, baseline)
    sigma = residual_sigma(res)
    preds = []
    for c in threshold_components(res, cfg, sigma=sigma, surface=surface):
        defect_class = classify_component(c, surface, cfg)
        bbox = c.bbox
        if defect_class == DefectClass.SURFACE_IRREGULARITY:
            bbox = _surface_box(bbox, surface, baseline)
        preds.append(Prediction(
            slice_index=z,
            defect_class=defect_class,
            box=BoundingBox.from_rect(bbox, width, height),
            confidence=confidence(c.mean_residual, cfg.z_thresh * sigma),
        ))
    return preds


def detect_volume(volume: Volume, cfg: DetectorConfig = DetectorConfig(), *,
                  jobs: int = 1, timing: bool = False):
    """Run ``detect_slice`` over every slice.

    Returns:
        (predictions, slice_ms): predictions maps slice index to its list;
        slice_ms is the per-slice wall clock in milliseconds when ``timing``
        is set (which forces sequential execution), else None.
    """
    zs = range(volume.depth)
    if timing:
        out = {}
        slice_ms = []
        for z in zs:
            t0 = time.perf_counter()
            out[z] = detect_slice(volume.slice(z), None, cfg)
            slice_ms.append((time.perf_counter() - t0) * 1e3)
        return out, slice_ms
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda z: detect_slice(volume.slice(z), None, cfg), zs))
    else:
        results = [detect_slice(volume.slice(z), None, cfg) for z in zs]
    return dict(zip(zs, results)), None
