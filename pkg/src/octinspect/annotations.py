"""Bounding-box labels, label/prediction files, and dataset manifests.

Label files hold one box per line, ``class_id cx cy w h``, in normalized
center format relative to the slice size.  Prediction files append a sixth
``confidence`` token.  A volume's labels live in one directory with one file
per slice named ``slice_<z:04d>.txt``; slices without a file carry no boxes.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import NamedTuple, Sequence

from .errors import (
    BadConfidence,
    DegenerateAfterClamp,
    IoFailure,
    MalformedLine,
    ManifestError,
    MissingLabels,
    NotSquare,
    OutOfRangeCoordinate,
    UnknownClassId,
)


class DefectClass(IntEnum):
    VOID = 0
    CRACK = 1
    SURFACE_IRREGULARITY = 2
    AGGLOMERATE = 3

    @property
    def key(self) -> str:
        """Lower-case identifier used in JSON and CSV documents."""
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> DefectClass:
        return cls[key.upper()]


DEFAULT_CLASS_NAMES = ("void", "crack", "surface_irregularity", "agglomerate")


class Rect(NamedTuple):
    """Absolute pixel rectangle; x1 and y1 are exclusive edges."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise OutOfRangeCoordinate(f"{name} is not finite")
        if not (0 < self.w <= 1 and 0 < self.h <= 1):
            raise OutOfRangeCoordinate(f"box size ({self.w}, {self.h}) outside (0, 1]")
        if not (0 <= self.cx <= 1 and 0 <= self.cy <= 1):
            raise OutOfRangeCoordinate(f"box center ({self.cx}, {self.cy}) outside [0, 1]")

    @classmethod
    def from_rect(cls, rect: Rect, width: int, height: int) -> BoundingBox:
        x0, y0, x1, y1 = rect
        return cls((x0 + x1) / 2 / width, (y0 + y1) / 2 / height,
                   (x1 - x0) / width, (y1 - y0) / height)


@dataclass(frozen=True)
class Annotation:
    slice_index: int
    defect_class: DefectClass
    box: BoundingBox


@dataclass(frozen=True)
class Prediction:
    slice_index: int
    defect_class: DefectClass
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0 <= self.confidence <= 1:
            raise BadConfidence(f"confidence {self.confidence} outside [0, 1]")


def to_absolute(box: BoundingBox, width: int, height: int) -> Rect:
    """Convert to pixel coordinates, clamping to the slice bounds."""
    if width < 1 or height < 1:
        raise ValueError(f"slice size {width}x{height} must be >= 1")
    x0 = min(max((box.cx - box.w / 2) * width, 0.0), width)
    x1 = min(max((box.cx + box.w / 2) * width, 0.0), width)
    y0 = min(max((box.cy - box.h / 2) * height, 0.0), height)
    y1 = min(max((box.cy + box.h / 2) * height, 0.0), height)
    if not (x0 < x1 and y0 < y1):
        raise DegenerateAfterClamp(f"{box} lies outside the {width}x{height} slice")
    return Rect(x0, y0, x1, y1)


def check_square(box: BoundingBox, width: int, height: int, tol_px: float = 1.0) -> None:
    if abs(box.w * width - box.h * height) > tol_px:
        raise NotSquare(
            f"box {box.w * width:.2f}x{box.h * height:.2f} px is not square within {tol_px} px")


def _parse_lines(text: str, slice_index: int, with_confidence: bool):
    ntok = 6 if with_confidence else 5
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != ntok:
            raise MalformedLine(line_no, f"expected {ntok} tokens, got {len(tokens)}")
        try:
            class_id = int(tokens[0])
            values = [float(t) for t in tokens[1:]]
        except ValueError:
            raise MalformedLine(line_no, f"non-numeric token in {line!r}") from None
        try:
            defect_class = DefectClass(class_id)
        except ValueError:
            raise UnknownClassId(f"line {line_no}: class id {class_id}") from None
        try:
            box = BoundingBox(*values[:4])
            if with_confidence:
                out.append(Prediction(slice_index, defect_class, box, values[4]))
            else:
                out.append(Annotation(slice_index, defect_class, box))
        except (OutOfRangeCoordinate, BadConfidence) as exc:
            raise type(exc)(f"line {line_no}: {exc}") from None
    return out


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def parse_label_file(path, slice_index: int) -> list[Annotation]:
    return _parse_lines(_read_text(path), slice_index, with_confidence=False)


def parse_prediction_file(path, slice_index: int) -> list[Prediction]:
    return _parse_lines(_read_text(path), slice_index, with_confidence=True)


def _single_slice(items: Sequence) -> None:
    if len({a.slice_index for a in items}) > 1:
        raise ValueError("all boxes written to one file must share a slice index")


def format_annotation(a: Annotation) -> str:
    b = a.box
    return f"{int(a.defect_class)} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"


def format_prediction(p: Prediction) -> str:
    b = p.box
    return (f"{int(p.defect_class)} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f} "
            f"{p.confidence:.6f}")


def _write_lines(lines: list[str], path) -> None:
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def write_label_file(annotations: Sequence[Annotation], path) -> None:
    """Write one slice's labels; coordinates are rendered with 6 decimals."""
    _single_slice(annotations)
    _write_lines([format_annotation(a) for a in annotations], path)


def write_prediction_file(predictions: Sequence[Prediction], path) -> None:
    _single_slice(predictions)
    _write_lines([format_prediction(p) for p in predictions], path)


_SLICE_FILE = re.compile(r"^slice_(\d{4,})\.txt$")


def slice_file_name(z: int) -> str:
    return f"slice_{z:04d}.txt"


def _slice_files(directory: Path) -> list[tuple[int, Path]]:
    if not directory.is_dir():
        raise MissingLabels(f"{directory}: directory not found")
    found = []
    for p in directory.iterdir():
        m = _SLICE_FILE.match(p.name)
        if m and p.is_file():
            found.append((int(m.group(1)), p))
    return sorted(found)


def read_label_dir(directory) -> dict[int, list[Annotation]]:
    """Map slice index to its annotations for every slice file present."""
    return {z: parse_label_file(p, z) for z, p in _slice_files(Path(directory))}


def read_prediction_dir(directory) -> dict[int, list[Prediction]]:
    return {z: parse_prediction_file(p, z) for z, p in _slice_files(Path(directory))}


def _clear_slice_files(directory: Path) -> None:
    for p in directory.iterdir():
        if _SLICE_FILE.match(p.name):
            p.unlink()


def write_label_dir(by_slice: dict[int, Sequence[Annotation]], directory, depth: int | None = None) -> None:
    """Write a label directory, replacing any slice files already there.

    When ``depth`` is given every slice gets a file, empty ones included.
    """
    _write_dir(by_slice, Path(directory), depth, write_label_file)


def write_prediction_dir(by_slice: dict[int, Sequence[Prediction]], directory,
                         depth: int | None = None) -> None:
    _write_dir(by_slice, Path(directory), depth, write_prediction_file)


def _write_dir(by_slice, directory: Path, depth, writer) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        _clear_slice_files(directory)
    except OSError as exc:
        raise IoFailure(f"{directory}: {exc}") from exc
    slices = range(depth) if depth is not None else sorted(by_slice)
    for z in slices:
        writer(list(by_slice.get(z, ())), directory / slice_file_name(z))


@dataclass(frozen=True)
class VolumeEntry:
    volume_id: str
    volume_path: str
    labels_dir: str


@dataclass(frozen=True)
class DatasetManifest:
    """Named dataset binding volumes to label directories.

    Relative paths resolve against ``root``, the directory holding the
    manifest file; ``root`` itself is not serialized.
    """

    name: str
    class_names: tuple[str, ...]
    volumes: tuple[VolumeEntry, ...]
    root: Path = Path(".")

    def __post_init__(self):
        if len(self.class_names) != len(DefectClass):
            raise ManifestError(f"class_names needs {len(DefectClass)} entries, got {len(self.class_names)}")
        ids = [v.volume_id for v in self.volumes]
        dupes = sorted(k for k, n in Counter(ids).items() if n > 1)
        if dupes:
            raise ManifestError(f"duplicate volume ids: {', '.join(dupes)}")

    @property
    def volume_ids(self) -> list[str]:
        return [v.volume_id for v in self.volumes]

    def entry(self, volume_id: str) -> VolumeEntry:
        for v in self.volumes:
            if v.volume_id == volume_id:
                return v
        raise ManifestError(f"volume {volume_id!r} not in manifest {self.name!r}")

    def volume_path(self, volume_id: str) -> Path:
        return self.root / self.entry(volume_id).volume_path

    def labels_dir(self, volume_id: str) -> Path:
        return self.root / self.entry(volume_id).labels_dir

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "class_names": list(self.class_names),
            "volumes": [
                {"volume_id": v.volume_id, "volume_path": v.volume_path, "labels_dir": v.labels_dir}
                for v in self.volumes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict, root=".") -> DatasetManifest:
        if not isinstance(doc, dict) or set(doc) != {"name", "class_names", "volumes"}:
            raise ManifestError("manifest must have exactly the keys name, class_names, volumes")
        volumes = []
        for i, v in enumerate(doc["volumes"]):
            if not isinstance(v, dict) or set(v) != {"volume_id", "volume_path", "labels_dir"}:
                raise ManifestError(f"volumes[{i}] must have exactly volume_id, volume_path, labels_dir")
            volumes.append(VolumeEntry(str(v["volume_id"]), str(v["volume_path"]), str(v["labels_dir"])))
        return cls(str(doc["name"]), tuple(doc["class_names"]), tuple(volumes), Path(root))

    @classmethod
    def load(cls, path) -> DatasetManifest:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"{path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: {exc}") from None
        return cls.from_dict(doc, root=path.parent)

    def save(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"{path}: {exc}") from exc


def count_by_class(manifest: DatasetManifest, volume_id: str) -> dict[DefectClass, int]:
    """Total annotations per class across all label files of one volume."""
    counts = {c: 0 for c in DefectClass}
    for annotations in read_label_dir(manifest.labels_dir(volume_id)).values():
        for a in annotations:
            counts[a.defect_class] += 1
    return counts
