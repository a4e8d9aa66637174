"""Seeded synthetic OCT-like volumes with exact per-slice ground truth.

Background model: air (0) above a material interface at ``surface_row``;
below it the intensity decays as ``material_level * exp(-alpha * depth)``
measured from the local interface.  Defects:

* void: dark ellipsoid, intensity shifted by ``contrast`` inside
* crack: dark segment dilated to ``thickness``, constant over its z span
* agglomerate: bright 3D Gaussian, footprint = where the weight >= 0.5
* surface irregularity: integer height bump (positive = protrusion) of the
  interface over a run of columns and slices; footprint = pixels whose
  material state changed

A defect is annotated on every slice where its footprint has >= 4 pixels,
with the tight bounding box of the footprint.

All randomness comes from SplitMix64 (counter-based, so numpy can generate
long streams in one call); uniforms use the top 53 bits, normals use
Box-Muller with both outputs of each pair.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .annotations import (
    DEFAULT_CLASS_NAMES,
    Annotation,
    BoundingBox,
    DatasetManifest,
    DefectClass,
    Rect,
    VolumeEntry,
    write_label_dir,
)
from .errors import BadConfig, IoFailure, PlacementOverflow
from .volume_io import Volume, save_ovf

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

MAX_PLACEMENT_RETRIES = 1000
MIN_FOOTPRINT_PX = 4
PLACEMENT_MARGIN_PX = 3
SUBSURFACE_CLEARANCE_PX = 12


def splitmix64_mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 generator; output i is ``mix(seed + (i + 1) * GOLDEN_GAMMA)``."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_mix(self.state)

    def u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def uniform(self, n: int | None = None):
        """Floats in [0, 1) built from the top 53 bits."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0 ** -53
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]


_DEFAULTS = {
    DefectClass.VOID: dict(contrast=-0.5, axes=(4.0, 9.0), z_axes=(1.5, 3.5)),
    DefectClass.CRACK: dict(contrast=-0.5, length=(30.0, 60.0), thickness=(2.0, 4.0),
                            angle=(-30.0, 30.0), z_axes=(1.5, 3.5)),
    DefectClass.AGGLOMERATE: dict(contrast=0.5, axes=(3.0, 6.0), z_axes=(1.5, 3.0)),
    DefectClass.SURFACE_IRREGULARITY: dict(contrast=0.5, bump_height=(4.0, 10.0),
                                           bump_width=(12.0, 30.0), z_axes=(1.5, 3.5)),
}


@dataclass(frozen=True)
class DefectSpec:
    """How many defects of one class to inject and their size ranges.

    Ranges are (min, max) pairs sampled uniformly.  ``axes`` are in-plane
    semi-axes for voids and Gaussian sigmas for agglomerates; ``z_axes`` is
    the half extent along z in slices.  Unset fields take class defaults.
    For surface irregularities ``contrast`` is nominal (only used by snr_of).
    """

    defect_class: DefectClass
    count: int = 1
    contrast: float | None = None
    axes: tuple[float, float] | None = None
    z_axes: tuple[float, float] | None = None
    length: tuple[float, float] | None = None
    thickness: tuple[float, float] | None = None
    angle: tuple[float, float] | None = None
    bump_height: tuple[float, float] | None = None
    bump_width: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "defect_class", DefectClass(self.defect_class))
        for name, value in _DEFAULTS[self.defect_class].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
            elif isinstance(value, tuple):
                lo, hi = getattr(self, name)
                object.__setattr__(self, name, (float(lo), float(hi)))
        if self.count < 0:
            raise BadConfig(f"defect count {self.count} must be >= 0")
        if abs(self.contrast) > 1:
            raise BadConfig(f"|contrast| {self.contrast} must be <= 1")
        for name in _DEFAULTS[self.defect_class]:
            value = getattr(self, name)
            if isinstance(value, tuple) and value[0] > value[1]:
                raise BadConfig(f"{name} range {value} is reversed")
        for name in ("axes", "z_axes", "length", "thickness", "bump_width"):
            value = getattr(self, name)
            if value is not None and name in _DEFAULTS[self.defect_class] and value[0] <= 0:
                raise BadConfig(f"{name} range {value} must be positive")

    def to_dict(self) -> dict:
        doc = {"defect_class": self.defect_class.key, "count": self.count, "contrast": self.contrast}
        for name in _DEFAULTS[self.defect_class]:
            if name != "contrast":
                doc[name] = list(getattr(self, name))
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> DefectSpec:
        doc = dict(doc)
        c = doc.pop("defect_class")
        c = DefectClass.from_key(c) if isinstance(c, str) else DefectClass(c)
        for k, v in doc.items():
            if isinstance(v, list):
                doc[k] = tuple(v)
        return cls(c, **doc)


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    width: int = 256
    height: int = 256
    depth: int = 12
    surface_row: int | None = None  # defaults to height // 8
    attenuation_alpha: float = 0.004
    noise_sigma: float = 0.05
    speckle: bool = False
    defects: tuple[DefectSpec, ...] = ()
    material_level: float = 0.75
    bit_depth: int = 8
    volume_id: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(self.defects))
        if self.surface_row is None:
            object.__setattr__(self, "surface_row", self.height // 8)
        if self.width < 32 or self.height < 32:
            raise BadConfig(f"slice {self.width}x{self.height} must be at least 32x32")
        if self.depth < 1:
            raise BadConfig(f"depth {self.depth} must be >= 1")
        if not 0 <= self.noise_sigma < 0.5:
            raise BadConfig(f"noise_sigma {self.noise_sigma} must lie in [0, 0.5)")
        if not 0 < self.surface_row < self.height:
            raise BadConfig(f"surface_row {self.surface_row} outside (0, {self.height})")
        if self.attenuation_alpha < 0:
            raise BadConfig("attenuation_alpha must be >= 0")
        if not 0 < self.material_level <= 1:
            raise BadConfig("material_level must lie in (0, 1]")
        if self.bit_depth not in (8, 16):
            raise BadConfig(f"bit_depth {self.bit_depth} not in (8, 16)")
        for d in self.defects:
            if d.defect_class == DefectClass.SURFACE_IRREGULARITY and d.count:
                if max(abs(h) for h in d.bump_height) >= self.surface_row:
                    raise BadConfig("bump_height must stay below surface_row")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["defects"] = [d.to_dict() for d in self.defects]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> SynthConfig:
        doc = dict(doc)
        doc["defects"] = tuple(DefectSpec.from_dict(d) for d in doc.get("defects", ()))
        return cls(**doc)


def snr_of(cfg: SynthConfig) -> float:
    """Count-weighted mean |contrast| divided by the noise sigma."""
    total = sum(d.count for d in cfg.defects)
    if total == 0:
        raise BadConfig("snr_of needs at least one defect")
    if cfg.noise_sigma == 0:
        raise BadConfig("snr_of is undefined for noise_sigma = 0")
    mean_contrast = sum(abs(d.contrast) * d.count for d in cfg.defects) / total
    return mean_contrast / cfg.noise_sigma


@dataclass
class _Placed:
    id: int
    defect_class: DefectClass
    extent: tuple[int, int, int, int, int, int]  # x0, x1, y0, y1, z0, z1 (inclusive)
    params: dict
    footprint: object = None  # callable z -> (mask, x0, y0) or None
    slices: list = field(default_factory=list)


@dataclass
class SynthResult:
    volume: Volume
    annotations: dict[int, list[Annotation]]
    defects: list[dict]
    surface: np.ndarray  # (depth, width) interface row per column

    def ground_truth(self) -> dict:
        return {"volume_id": self.volume.id, "defects": self.defects}


def _overlaps(a, b, margin: int) -> bool:
    ax0, ax1, ay0, ay1, az0, az1 = a
    bx0, bx1, by0, by1, bz0, bz1 = b
    return (ax0 - margin <= bx1 and bx0 - margin <= ax1
            and ay0 - margin <= by1 and by0 - margin <= ay1
            and az0 <= bz1 and bz0 <= az1)


def _grid(x0, x1, y0, y1):
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    return xs.astype(np.float64), ys.astype(np.float64)


def _propose(rng: SplitMix64, spec: DefectSpec, cfg: SynthConfig, top: int):
    """Draw one candidate defect; returns (extent, params) or None if it cannot fit."""
    W, H, D = cfg.width, cfg.height, cfg.depth
    cls = spec.defect_class
    rz = rng.uniform_range(*spec.z_axes)
    cz = rng.integer(0, D - 1)
    # a Gaussian is rendered out to 3 sigma along z as well
    iz = int(math.floor(3 * rz if cls == DefectClass.AGGLOMERATE else rz))
    z0, z1 = max(0, cz - iz), min(D - 1, cz + iz)
    if cls == DefectClass.SURFACE_IRREGULARITY:
        bw = int(round(rng.uniform_range(*spec.bump_width)))
        bh = rng.uniform_range(*spec.bump_height)
        if bw + 2 > W:
            return None
        bx = rng.integer(1, W - bw - 1)
        s = cfg.surface_row
        hmax = int(math.ceil(abs(bh)))
        extent = (bx, bx + bw - 1, s - hmax, s + hmax, z0, z1)
        return extent, dict(x=bx, width=bw, height=bh, cz=cz, rz=rz)
    if cls == DefectClass.CRACK:
        length = rng.uniform_range(*spec.length)
        thick = rng.uniform_range(*spec.thickness)
        theta = math.radians(rng.uniform_range(*spec.angle))
        hx = abs(math.cos(theta)) * length / 2 + thick / 2
        hy = abs(math.sin(theta)) * length / 2 + thick / 2
    elif cls == DefectClass.VOID:
        hx = rng.uniform_range(*spec.axes)
        hy = rng.uniform_range(*spec.axes)
    else:
        sx = rng.uniform_range(*spec.axes)
        sy = rng.uniform_range(*spec.axes)
        # rendered out to 3 sigma
        hx, hy = 3 * sx, 3 * sy
    lo_x, hi_x = hx + 1, W - hx - 2
    lo_y, hi_y = top + hy, H - hy - 2
    if lo_x > hi_x or lo_y > hi_y:
        return None
    cx = rng.uniform_range(lo_x, hi_x)
    cy = rng.uniform_range(lo_y, hi_y)
    extent = (int(math.floor(cx - hx)), int(math.ceil(cx + hx)),
              int(math.floor(cy - hy)), int(math.ceil(cy + hy)), z0, z1)
    params = dict(cx=cx, cy=cy, cz=cz, rz=rz)
    if cls == DefectClass.CRACK:
        params.update(length=length, thickness=thick, angle_deg=math.degrees(theta))
    elif cls == DefectClass.VOID:
        params.update(rx=hx, ry=hy)
    else:
        params.update(sigma_x=sx, sigma_y=sy)
    return extent, params


def _void_mask(p, extent, z):
    x0, x1, y0, y1 = extent[:4]
    xs, ys = _grid(x0, x1, y0, y1)
    dz = (z - p["cz"]) / p["rz"]
    return ((xs - p["cx"]) / p["rx"]) ** 2 + ((ys - p["cy"]) / p["ry"]) ** 2 + dz * dz <= 1.0


def _crack_mask(p, extent, z):
    x0, x1, y0, y1 = extent[:4]
    if abs(z - p["cz"]) > p["rz"]:
        return np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    xs, ys = _grid(x0, x1, y0, y1)
    theta = math.radians(p["angle_deg"])
    ux, uy = math.cos(theta), math.sin(theta)
    dx, dy = xs - p["cx"], ys - p["cy"]
    along = np.clip(dx * ux + dy * uy, -p["length"] / 2, p["length"] / 2)
    dist2 = (dx - along * ux) ** 2 + (dy - along * uy) ** 2
    return dist2 <= (p["thickness"] / 2) ** 2


def _gauss_weight(p, extent, z):
    x0, x1, y0, y1 = extent[:4]
    xs, ys = _grid(x0, x1, y0, y1)
    q = (((xs - p["cx"]) / p["sigma_x"]) ** 2 + ((ys - p["cy"]) / p["sigma_y"]) ** 2
         + ((z - p["cz"]) / p["rz"]) ** 2)
    return np.exp(-0.5 * q)


def _bump_heights(p) -> np.ndarray:
    cols = np.arange(p["width"])
    profile = np.sin(np.pi * (cols + 0.5) / p["width"])
    return np.round(p["height"] * profile).astype(np.int64)


def generate(cfg: SynthConfig) -> SynthResult:
    """Render a volume and its annotations; identical output for identical configs."""
    rng = SplitMix64(cfg.seed)
    W, H, D = cfg.width, cfg.height, cfg.depth
    max_bump = max((math.ceil(abs(h)) for d in cfg.defects if d.count
                    and d.defect_class == DefectClass.SURFACE_IRREGULARITY for h in d.bump_height),
                   default=0)
    top = cfg.surface_row + max_bump + SUBSURFACE_CLEARANCE_PX

    placed: list[_Placed] = []
    for spec in cfg.defects:
        for k in range(spec.count):
            for _ in range(MAX_PLACEMENT_RETRIES):
                proposal = _propose(rng, spec, cfg, top)
                if proposal is None:
                    continue
                extent, params = proposal
                if not any(_overlaps(extent, q.extent, PLACEMENT_MARGIN_PX) for q in placed):
                    placed.append(_Placed(len(placed), spec.defect_class, extent,
                                          dict(params, contrast=spec.contrast)))
                    break
            else:
                raise PlacementOverflow(
                    f"could not place {spec.defect_class.key} #{k + 1} after "
                    f"{MAX_PLACEMENT_RETRIES} attempts; the volume is too crowded")

    # interface height field
    surface = np.full((D, W), cfg.surface_row, dtype=np.int64)
    for d in placed:
        if d.defect_class == DefectClass.SURFACE_IRREGULARITY:
            p = d.params
            z0, z1 = d.extent[4:]
            surface[z0:z1 + 1, p["x"]:p["x"] + p["width"]] -= _bump_heights(p)

    rows = np.arange(H)[None, :, None]
    below = rows - surface[:, None, :]
    intensity = np.where(below >= 0, cfg.material_level * np.exp(-cfg.attenuation_alpha * np.maximum(below, 0)), 0.0)

    annotations: dict[int, list[Annotation]] = {}

    def annotate(d: _Placed, z: int, mask: np.ndarray, x0: int, y0: int):
        n = int(mask.sum())
        if n < MIN_FOOTPRINT_PX:
            return
        ys, xs = np.nonzero(mask)
        rect = Rect(x0 + int(xs.min()), y0 + int(ys.min()), x0 + int(xs.max()) + 1, y0 + int(ys.max()) + 1)
        box = BoundingBox.from_rect(rect, W, H)
        annotations.setdefault(z, []).append(Annotation(z, d.defect_class, box))
        d.slices.append(z)

    for d in placed:
        x0, x1, y0, y1, z0, z1 = d.extent
        p = d.params
        for z in range(z0, z1 + 1):
            window = intensity[z, y0:y1 + 1, x0:x1 + 1]
            if d.defect_class == DefectClass.VOID:
                mask = _void_mask(p, d.extent, z)
                window += p["contrast"] * mask
            elif d.defect_class == DefectClass.CRACK:
                mask = _crack_mask(p, d.extent, z)
                window += p["contrast"] * mask
            elif d.defect_class == DefectClass.AGGLOMERATE:
                weight = _gauss_weight(p, d.extent, z)
                window += p["contrast"] * weight
                mask = weight >= 0.5
            else:
                base = cfg.surface_row
                cols = surface[z, x0:x1 + 1]
                ys = np.arange(y0, y1 + 1)[:, None]
                mask = (ys >= np.minimum(cols, base)[None, :]) & (ys < np.maximum(cols, base)[None, :])
            annotate(d, z, mask, x0, y0)

    if cfg.speckle:
        intensity *= 1.0 + cfg.noise_sigma * rng.normal(intensity.size).reshape(intensity.shape)
    if cfg.noise_sigma > 0:
        intensity += cfg.noise_sigma * rng.normal(intensity.size).reshape(intensity.shape)
    top_level = (1 << cfg.bit_depth) - 1
    voxels = np.floor(np.clip(intensity, 0.0, 1.0) * top_level + 0.5)
    volume = Volume(cfg.volume_id, voxels.astype(np.uint8 if cfg.bit_depth == 8 else np.uint16),
                    cfg.bit_depth)

    defects = []
    for d in placed:
        x0, x1, y0, y1, z0, z1 = d.extent
        defects.append({
            "id": d.id,
            "class": d.defect_class.key,
            "extent": {"x": [x0, x1], "y": [y0, y1], "z": [z0, z1]},
            "params": {k: (round(v, 9) if isinstance(v, float) else v) for k, v in d.params.items()},
            "annotated_slices": d.slices,
        })
    return SynthResult(volume, dict(sorted(annotations.items())), defects, surface)


def volume_seeds(seed: int, n: int) -> list[int]:
    rng = SplitMix64(seed)
    return [rng.next_u64() for _ in range(n)]


def write_dataset(configs, out_dir, name: str = "synthetic") -> Path:
    """Generate each config and write volumes, labels, ground truth and a manifest.

    Layout: ``volumes/<id>.ovf``, ``labels/<id>/slice_<z>.txt``,
    ``ground_truth/<id>.json`` and ``manifest.json`` (returned).
    """
    out = Path(out_dir)
    try:
        for sub in ("volumes", "labels", "ground_truth"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    entries = []
    for cfg in configs:
        result = generate(cfg)
        vid = cfg.volume_id
        save_ovf(result.volume, out / "volumes" / f"{vid}.ovf")
        write_label_dir(result.annotations, out / "labels" / vid, depth=cfg.depth)
        doc = dict(result.ground_truth(), config=cfg.to_dict())
        (out / "ground_truth" / f"{vid}.json").write_text(json.dumps(doc, indent=2) + "\n")
        entries.append(VolumeEntry(vid, f"volumes/{vid}.ovf", f"labels/{vid}"))
    manifest = DatasetManifest(name, DEFAULT_CLASS_NAMES, tuple(entries), out)
    path = out / "manifest.json"
    manifest.save(path)
    return path


def dataset_configs(base: SynthConfig, n_volumes: int, prefix: str = "v") -> list[SynthConfig]:
    """``n_volumes`` copies of ``base`` with derived seeds and ids ``<prefix>1..``."""
    seeds = volume_seeds(base.seed, n_volumes)
    return [replace(base, seed=s, volume_id=f"{prefix}{i + 1}") for i, s in enumerate(seeds)]
