import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import BOX_COUNTS, random_box, write_count_fixture
from octinspect.annotations import (
    DEFAULT_CLASS_NAMES,
    Annotation,
    BoundingBox,
    DatasetManifest,
    DefectClass,
    Prediction,
    VolumeEntry,
    check_square,
    count_by_class,
    format_annotation,
    parse_label_file,
    parse_prediction_file,
    read_label_dir,
    slice_file_name,
    to_absolute,
    write_label_dir,
    write_label_file,
)
from octinspect.errors import (
    BadConfidence,
    DegenerateAfterClamp,
    MalformedLine,
    ManifestError,
    MissingLabels,
    NotSquare,
    OutOfRangeCoordinate,
    UnknownClassId,
)


def label(tmp_path, text, name="slice_0000.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def raster_extent(box, width, height):
    """Pixel-centre rasterization: the covered columns and rows of the unclamped box."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    cols = np.nonzero((xs >= box.cx - box.w / 2) & (xs < box.cx + box.w / 2))[0]
    rows = np.nonzero((ys >= box.cy - box.h / 2) & (ys < box.cy + box.h / 2))[0]
    return cols.min(), rows.min(), cols.max() + 1, rows.max() + 1


def test_parse_single_line(tmp_path):
    (a,) = parse_label_file(label(tmp_path, "0 0.5 0.5 0.1 0.1\n"), 0)
    assert a.defect_class is DefectClass.VOID
    assert a.box == BoundingBox(0.5, 0.5, 0.1, 0.1)


def test_overhanging_box_is_accepted(tmp_path):
    (a,) = parse_label_file(label(tmp_path, "1 0.95 0.5 0.2 0.1\n"), 3)
    assert a.slice_index == 3
    assert to_absolute(a.box, 100, 100).x1 == 100


@pytest.mark.parametrize("text, exc", [
    ("0 0.5 0.5 0.0 0.1\n", OutOfRangeCoordinate),
    ("0 -0.1 0.5 0.1 0.1\n", OutOfRangeCoordinate),
    ("0 0.5 0.5 1.5 0.1\n", OutOfRangeCoordinate),
    ("7 0.5 0.5 0.1 0.1\n", UnknownClassId),
    ("0 0.5 0.5 0.1\n", MalformedLine),
    ("0 0.5 abc 0.1 0.1\n", MalformedLine),
    ("0 nan 0.5 0.1 0.1\n", OutOfRangeCoordinate),
])
def test_rejects_bad_lines(tmp_path, text, exc):
    with pytest.raises(exc):
        parse_label_file(label(tmp_path, text), 0)


def test_malformed_line_number(tmp_path):
    with pytest.raises(MalformedLine) as info:
        parse_label_file(label(tmp_path, "0 0.5 0.5 0.1 0.1\n\n2 0.1\n"), 0)
    assert info.value.line_no == 3


def test_prediction_confidence(tmp_path):
    (p,) = parse_prediction_file(label(tmp_path, "2 0.5 0.5 0.1 0.1 0.25\n"), 0)
    assert p.confidence == 0.25
    with pytest.raises(BadConfidence):
        parse_prediction_file(label(tmp_path, "2 0.5 0.5 0.1 0.1 1.5\n"), 0)


def test_six_decimal_rendering(tmp_path):
    a = Annotation(0, DefectClass.CRACK, BoundingBox(1 / 3, 0.5, 0.25, 0.125))
    assert format_annotation(a) == "1 0.333333 0.500000 0.250000 0.125000"
    p = tmp_path / "s.txt"
    write_label_file([a], p)
    (back,) = parse_label_file(p, 0)
    assert abs(back.box.cx - 1 / 3) <= 5e-7


def test_empty_list_writes_empty_file(tmp_path):
    p = tmp_path / "s.txt"
    write_label_file([], p)
    assert p.read_bytes() == b""
    assert parse_label_file(p, 0) == []


def test_roundtrip_100_random(tmp_path):
    rng = np.random.default_rng(11)
    anns = [Annotation(0, DefectClass(int(rng.integers(4))), random_box(rng)) for _ in range(100)]
    p = tmp_path / "s.txt"
    write_label_file(anns, p)
    back = parse_label_file(p, 0)
    assert [a.defect_class for a in back] == [a.defect_class for a in anns]
    for a, b in zip(anns, back):
        for f in ("cx", "cy", "w", "h"):
            assert abs(getattr(a.box, f) - getattr(b.box, f)) <= 5e-7
    q = tmp_path / "t.txt"
    write_label_file(back, q)
    assert q.read_bytes() == p.read_bytes()


def test_to_absolute_examples():
    box = BoundingBox(0.5, 0.5, 0.5, 0.5)
    assert tuple(to_absolute(box, 400, 400)) == (100, 100, 300, 300)
    assert raster_extent(box, 400, 400) == (100, 100, 300, 300)
    edge = BoundingBox(0.0, 0.5, 0.2, 0.2)
    assert tuple(to_absolute(edge, 400, 400)) == pytest.approx((0, 160, 40, 240))
    assert raster_extent(edge, 400, 400) == (0, 160, 40, 240)


def test_to_absolute_degenerate_after_clamp():
    # the span collapses in floating point once clamped to the right edge
    with pytest.raises(DegenerateAfterClamp):
        to_absolute(BoundingBox(1.0, 0.5, 1e-20, 0.5), 1, 1)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.floats(0.01, 1),
       st.integers(1, 2048), st.integers(1, 2048))
def test_to_absolute_within_bounds(cx, cy, w, h, width, height):
    r = to_absolute(BoundingBox(cx, cy, w, h), width, height)
    assert 0 <= r.x0 < r.x1 <= width
    assert 0 <= r.y0 < r.y1 <= height


@given(st.floats(0.2, 0.8), st.floats(0.2, 0.8), st.floats(0.01, 0.3), st.floats(0.01, 0.3),
       st.floats(0.001, 0.1))
def test_to_absolute_monotone_in_size(cx, cy, w, h, grow):
    small = to_absolute(BoundingBox(cx, cy, w, h), 400, 400)
    big = to_absolute(BoundingBox(cx, cy, min(w + grow, 1), min(h + grow, 1)), 400, 400)
    assert big.x0 <= small.x0 and big.y0 <= small.y0
    assert big.x1 >= small.x1 and big.y1 >= small.y1


def test_check_square():
    check_square(BoundingBox(0.5, 0.5, 0.1, 0.2), 400, 200)
    with pytest.raises(NotSquare):
        check_square(BoundingBox(0.5, 0.5, 0.1, 0.1), 400, 200)


def test_label_dir_roundtrip(tmp_path):
    a = Annotation(2, DefectClass.AGGLOMERATE, BoundingBox(0.25, 0.75, 0.125, 0.25))
    write_label_dir({2: [a]}, tmp_path / "lab", depth=4)
    names = sorted(p.name for p in (tmp_path / "lab").iterdir())
    assert names == [slice_file_name(z) for z in range(4)]
    assert read_label_dir(tmp_path / "lab") == {0: [], 1: [], 2: [a], 3: []}


def test_label_dir_replaces_stale_files(tmp_path):
    a = Annotation(5, DefectClass.VOID, BoundingBox(0.5, 0.5, 0.5, 0.5))
    write_label_dir({5: [a]}, tmp_path)
    write_label_dir({}, tmp_path, depth=2)
    assert read_label_dir(tmp_path) == {0: [], 1: []}


def test_missing_label_dir(tmp_path):
    with pytest.raises(MissingLabels):
        read_label_dir(tmp_path / "absent")


def test_prediction_needs_valid_confidence():
    with pytest.raises(BadConfidence):
        Prediction(0, DefectClass.VOID, BoundingBox(0.5, 0.5, 0.1, 0.1), -0.1)


# --- manifests


def test_manifest_roundtrip(tmp_path):
    m = DatasetManifest("d", DEFAULT_CLASS_NAMES, (VolumeEntry("a", "vol/a.ovf", "lab/a"),), tmp_path)
    path = tmp_path / "manifest.json"
    m.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"name", "class_names", "volumes"}
    back = DatasetManifest.load(path)
    assert back == m
    assert back.volume_path("a") == tmp_path / "vol" / "a.ovf"


@pytest.mark.parametrize("doc", [
    {"name": "x", "class_names": list(DEFAULT_CLASS_NAMES), "volumes": [], "extra": 1},
    {"name": "x", "class_names": ["a"], "volumes": []},
    {"name": "x", "class_names": list(DEFAULT_CLASS_NAMES),
     "volumes": [{"volume_id": "a", "volume_path": "p", "labels_dir": "l"}] * 2},
    {"name": "x", "class_names": list(DEFAULT_CLASS_NAMES), "volumes": [{"volume_id": "a"}]},
])
def test_manifest_rejects(doc):
    with pytest.raises(ManifestError):
        DatasetManifest.from_dict(doc)


def test_manifest_bad_json(tmp_path):
    (tmp_path / "m.json").write_text("{")
    with pytest.raises(ManifestError):
        DatasetManifest.load(tmp_path / "m.json")


def test_count_by_class_fixture_rows(box_count_manifest):
    for vid in ("fA", "cB"):
        counts = count_by_class(box_count_manifest, vid)
        assert tuple(counts[c] for c in DefectClass) == BOX_COUNTS[vid]


def test_count_empty_label_dir(tmp_path):
    m = DatasetManifest.load(write_count_fixture(tmp_path, {"e": (0, 0, 0, 0)}))
    assert count_by_class(m, "e") == {c: 0 for c in DefectClass}


def test_count_invariant_under_slice_renumbering(tmp_path):
    rows = {"v": (5, 3, 2, 1)}
    a = DatasetManifest.load(write_count_fixture(tmp_path / "a", rows, depth=7, seed=1))
    b = DatasetManifest.load(write_count_fixture(tmp_path / "b", rows, depth=3, seed=2))
    assert count_by_class(a, "v") == count_by_class(b, "v")
