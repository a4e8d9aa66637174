import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from octinspect.annotations import DefectClass, format_prediction, to_absolute
from octinspect.detector import (
    Component,
    DetectorConfig,
    _conditioned,
    anomaly_map,
    classify_component,
    confidence,
    detect_slice,
    detect_volume,
    threshold_components,
)
from octinspect.errors import BadConfig
from octinspect.annotations import Rect
from octinspect.metrics import iou
from octinspect.preprocess import normalize
from octinspect.synth import DefectSpec, SynthConfig, generate
from octinspect.volume_io import Volume

CFG = DetectorConfig()


def flat_material(h=128, w=128, level=0.6, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    return np.full((h, w), level) + noise * rng.standard_normal((h, w))


def disc(a, cy, cx, r, delta):
    ys, xs = np.mgrid[: a.shape[0], : a.shape[1]]
    mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    a = a.copy()
    a[mask] += delta
    return a, mask


def to_u8(a):
    return np.floor(np.clip(a, 0, 1) * 255 + 0.5).astype(np.uint8)


@pytest.mark.parametrize("kw", [
    dict(median_k=4), dict(bg_k=0), dict(z_thresh=0), dict(min_area=0),
    dict(connectivity=6), dict(surface_band=-1), dict(crack_elongation=0.5), dict(surface_theta=1.0),
])
def test_config_validation(kw):
    with pytest.raises(BadConfig):
        DetectorConfig(**kw)


def test_anomaly_map_constant_is_zero():
    assert not anomaly_map(np.full((40, 40), 0.3)).any()


def test_anomaly_map_dark_ellipse():
    a, mask = disc(flat_material(), 64, 64, 6, -0.4)
    res = anomaly_map(a)
    assert np.all(res[mask] < 0)
    assert np.allclose(res[:20, :20], 0)


def test_anomaly_map_bright_blob():
    a, _ = disc(flat_material(), 64, 64, 4, 0.3)
    assert anomaly_map(a)[64, 64] > 0


def test_uint8_fast_path_is_bitwise_equal():
    res = generate(SynthConfig(seed=9, width=96, height=96, depth=2, defects=(DefectSpec(DefectClass.VOID, 3),)))
    px = res.volume.slice(1).pixels
    _, fast, _ = _conditioned(px, CFG)
    slow = anomaly_map(normalize(px), CFG)
    assert np.array_equal(fast, slow)


def test_components_of_zero_map():
    assert threshold_components(np.zeros((30, 30))) == []


def test_two_separated_blobs():
    a = flat_material(noise=0.02, seed=1)
    a, m1 = disc(a, 30, 30, 5, -0.5)
    a, m2 = disc(a, 90, 95, 5, -0.5)
    comps = threshold_components(anomaly_map(a))
    assert len(comps) == 2
    centres = {(30, 30), (90, 95)}
    for c in comps:
        hit = {(y, x) for y, x in centres if c.bbox.y0 <= y < c.bbox.y1 and c.bbox.x0 <= x < c.bbox.x1}
        assert len(hit) == 1
        centres -= hit
    assert comps[0].area >= comps[1].area


def test_min_area_drops_small_blob():
    res = np.zeros((40, 40))
    res[10:15, 10] = -1.0  # five pixels
    res[30, 30] = 0.01
    assert threshold_components(res, DetectorConfig(min_area=9), sigma=0.1) == []
    assert len(threshold_components(res, DetectorConfig(min_area=5), sigma=0.1)) == 1


def test_elongation_of_rectangle_is_aspect_ratio():
    res = np.zeros((60, 60))
    res[20:23, 10:50] = -1.0  # 40 x 3 streak
    (c,) = threshold_components(res, sigma=0.1)
    assert c.elongation == pytest.approx(40 / 3, rel=1e-12)
    assert classify_component(c, None, CFG) is DefectClass.CRACK


def component(mean, elong=1.0, bbox=Rect(50, 50, 60, 60), touches=False):
    return Component(np.zeros((0, 2), int), 100, bbox, mean, elong, touches)


def test_classification_priority():
    surface = np.full(128, 47)
    near = Rect(50, 50, 60, 60)
    far = Rect(50, 90, 60, 100)
    assert classify_component(component(-1, 10, near), surface, CFG) is DefectClass.SURFACE_IRREGULARITY
    assert classify_component(component(-1, 10, far), surface, CFG) is DefectClass.CRACK
    assert classify_component(component(+1, 1, far), surface, CFG) is DefectClass.AGGLOMERATE
    assert classify_component(component(-1, 1, far), surface, CFG) is DefectClass.VOID


def test_confidence_range():
    assert confidence(0.0, 1.0) == 0.0
    assert 0 < confidence(0.5, 1.0) < confidence(2.0, 1.0) <= 1.0


def test_blank_slice_has_no_predictions():
    assert detect_slice(np.full((64, 64), 100, np.uint8)) == []


def test_void_on_flat_background():
    a = flat_material(noise=0.05, seed=2)
    a, mask = disc(a, 70, 50, 7, -0.5)
    preds = detect_slice(to_u8(a), z=4)
    assert len(preds) == 1
    (p,) = preds
    assert p.defect_class is DefectClass.VOID and p.slice_index == 4
    ys, xs = np.nonzero(mask)
    truth = Rect(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    assert iou(to_absolute(p.box, 128, 128), truth) >= 0.5
    assert 0 < p.confidence <= 1
    assert detect_slice(to_u8(a), cfg=DetectorConfig(z_thresh=100)) == []


def test_z_thresh_monotone():
    res = generate(SynthConfig(seed=3, width=128, height=128, depth=1,
                               defects=(DefectSpec(DefectClass.VOID, 4), DefectSpec(DefectClass.AGGLOMERATE, 2))))
    counts = [len(detect_slice(res.volume.slice(0), cfg=DetectorConfig(z_thresh=t)))
              for t in (2.0, 2.5, 3.0, 4.0, 6.0, 10.0)]
    assert counts == sorted(counts, reverse=True)


@settings(max_examples=15, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_translation_equivariance(dx, dy):
    a = np.full((128, 128), 0.6)
    a[60:68, 58:70] = 0.1
    shifted = np.full_like(a, 0.6)
    shifted[60 + dy:68 + dy, 58 + dx:70 + dx] = 0.1
    (p,) = detect_slice(to_u8(a))
    (q,) = detect_slice(to_u8(shifted))
    r, s = to_absolute(p.box, 128, 128), to_absolute(q.box, 128, 128)
    assert (s.x0 - r.x0, s.y0 - r.y0) == pytest.approx((dx, dy), abs=1e-9)
    assert (s.x1 - r.x1, s.y1 - r.y1) == pytest.approx((dx, dy), abs=1e-9)


def test_detect_is_deterministic():
    res = generate(SynthConfig(seed=12, width=96, height=96, depth=3, defects=(DefectSpec(DefectClass.VOID, 3),)))
    a, _ = detect_volume(res.volume)
    b, _ = detect_volume(res.volume)
    dump = lambda d: [format_prediction(p) for z in sorted(d) for p in d[z]]  # noqa: E731
    assert dump(a) == dump(b)


def test_detect_volume_parallel_matches_sequential():
    res = generate(SynthConfig(seed=13, width=96, height=96, depth=6, defects=(DefectSpec(DefectClass.VOID, 4),)))
    seq, none = detect_volume(res.volume)
    par, _ = detect_volume(res.volume, jobs=3)
    assert none is None and seq == par
    timed, ms = detect_volume(res.volume, timing=True)
    assert timed == seq and len(ms) == 6 and all(t > 0 for t in ms)


def test_sixteen_bit_volume():
    a, _ = disc(flat_material(noise=0.05, seed=4), 64, 64, 7, -0.5)
    vox = np.floor(np.clip(a, 0, 1) * 65535 + 0.5).astype(np.uint16)[None]
    (p,) = detect_slice(Volume("w", vox, 16).slice(0))
    assert p.defect_class is DefectClass.VOID
