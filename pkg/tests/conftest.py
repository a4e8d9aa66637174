from pathlib import Path

import numpy as np
import pytest

from octinspect.annotations import (
    DEFAULT_CLASS_NAMES,
    Annotation,
    BoundingBox,
    DatasetManifest,
    DefectClass,
    VolumeEntry,
    write_label_dir,
)
from octinspect.volume_io import Volume, save_ovf

GOLDEN = Path(__file__).parent / "golden"

# rows of the per-volume box count table: void, crack, surface irregularity, agglomerate
BOX_COUNTS = {
    "fA": (87, 78, 0, 0),
    "fB": (29, 248, 0, 0),
    "fC": (0, 31, 0, 0),
    "cA": (459, 0, 99, 31),
    "cB": (270, 0, 16, 3),
    "cC": (335, 0, 174, 5),
}

_acceptance_lines = []


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" -- {detail}" if detail else "")
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def random_box(rng) -> BoundingBox:
    w, h = rng.uniform(0.01, 0.3, size=2)
    cx, cy = rng.uniform(0.0, 1.0, size=2)
    return BoundingBox(float(cx), float(cy), float(w), float(h))


def write_count_fixture(root: Path, counts: dict, depth: int = 20, seed: int = 0) -> Path:
    """Dataset whose label files hold exactly ``counts[vid][class]`` boxes per volume.

    Boxes are spread round-robin over ``depth`` slices of a small 8x8 volume.
    """
    rng = np.random.default_rng(seed)
    entries = []
    (root / "volumes").mkdir(parents=True, exist_ok=True)
    for vid, row in counts.items():
        by_slice = {}
        k = 0
        for cls, n in zip(DefectClass, row):
            for _ in range(n):
                z = k % depth
                by_slice.setdefault(z, []).append(Annotation(z, cls, random_box(rng)))
                k += 1
        write_label_dir(by_slice, root / "labels" / vid, depth=depth)
        save_ovf(Volume(vid, np.zeros((depth, 8, 8), np.uint8)), root / "volumes" / f"{vid}.ovf")
        entries.append(VolumeEntry(vid, f"volumes/{vid}.ovf", f"labels/{vid}"))
    manifest = DatasetManifest("box_counts", DEFAULT_CLASS_NAMES, tuple(entries), root)
    path = root / "manifest.json"
    manifest.save(path)
    return path


@pytest.fixture
def box_count_manifest(tmp_path):
    return DatasetManifest.load(write_count_fixture(tmp_path, BOX_COUNTS))


# reference results rows: per-class AP (None = class absent), train hours, inference ms
REFERENCE_ROWS = [
    ("train fB fC - inference fA", (0.238, 0.386, None, None), 0.136, 1.0),
    ("train fA fC - inference fB", (0.785, 0.103, None, None), 0.128, 0.9),
    ("train fA fB - inference fC", (None, 0.0351, None, None), 0.181, 1.7),
    ("train cB cC - inference cA", (0.701, None, 0.0, 0.501), 0.134, 2.1),
    ("train cA cC - inference cB", (0.56, None, 0.141, 0.233), 0.099, 0.9),
    ("train cA cB - inference cC", (0.792, None, 0.273, 0.284), 0.125, 1.4),
]

# the same rows as rendered cells
REFERENCE_CELLS = [
    ["0.238", "0.386", "-", "-", "0.136h/1.0ms"],
    ["0.785", "0.103", "-", "-", "0.128h/0.9ms"],
    ["-", "0.0351", "-", "-", "0.181h/1.7ms"],
    ["0.701", "-", "0", "0.501", "0.134h/2.1ms"],
    ["0.56", "-", "0.141", "0.233", "0.099h/0.9ms"],
    ["0.792", "-", "0.273", "0.284", "0.125h/1.4ms"],
]


def reference_reports():
    from octinspect.experiment import EvalReport
    from octinspect.metrics import ClassCounts, map50

    reports = []
    for label, aps, hours, ms in REFERENCE_ROWS:
        class_aps = dict(zip(DefectClass, aps))
        counts = {c: ClassCounts() for c in DefectClass}
        reports.append(EvalReport(label, class_aps, map50(class_aps.values()), counts, hours, ms))
    return reports
