"""Detection metrics: IoU, greedy matching, precision-recall, AP and mAP50.

Matching is per class and per slice.  Predictions are visited in descending
confidence; each one claims the still-unmatched ground truth with the
highest IoU, and counts as a true positive when that IoU reaches the
threshold (``>=``; ``strict=True`` switches to ``>``).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotations import Annotation, DefectClass, Prediction, Rect, to_absolute
from .errors import DegenerateBox, NoGroundTruth


def iou(a: Rect, b: Rect) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    if not (ax0 < ax1 and ay0 < ay1 and bx0 < bx1 and by0 < by1):
        raise DegenerateBox(f"IoU needs x0 < x1 and y0 < y1, got {tuple(a)} and {tuple(b)}")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return min(1.0, inter / union)


@dataclass(frozen=True)
class Verdict:
    prediction: Prediction
    tp: bool
    gt_index: int | None  # index into the ground-truth list for true positives
    iou: float  # IoU with the best unmatched ground truth at visit time


@dataclass(frozen=True)
class MatchResult:
    """Verdicts in visiting order (descending confidence, canonical tie-break)."""

    verdicts: tuple[Verdict, ...]
    fn: int
    iou_threshold: float

    @property
    def tp(self) -> int:
        return sum(v.tp for v in self.verdicts)

    @property
    def fp(self) -> int:
        return len(self.verdicts) - self.tp


def canonical_order(preds: Sequence[Prediction]) -> list[int]:
    """Indices of ``preds`` sorted by descending confidence.

    Equal confidences fall back to box coordinates, class and slice so the
    order depends only on content; the input index only separates
    predictions that are identical in every field.
    """
    def key(i):
        p = preds[i]
        b = p.box
        return (-p.confidence, b.cx, b.cy, b.w, b.h, int(p.defect_class), p.slice_index, i)

    return sorted(range(len(preds)), key=key)


def match_detections(preds: Sequence[Prediction], gts: Sequence[Annotation],
                     iou_threshold: float = 0.5, *, strict: bool = False,
                     width: int = 1, height: int = 1) -> MatchResult:
    """Greedy confidence-ordered matching of one class on one slice.

    IoU is scale invariant, so the default unit slice size gives the same
    result as pixel coordinates apart from floating point rounding.
    """
    gt_rects = [to_absolute(g.box, width, height) for g in gts]
    matched = [False] * len(gts)
    verdicts = []
    for i in canonical_order(preds):
        p = preds[i]
        rect = to_absolute(p.box, width, height)
        best, best_iou = None, 0.0
        for j, g in enumerate(gt_rects):
            if matched[j]:
                continue
            v = iou(rect, g)
            if v > best_iou:
                best, best_iou = j, v
        hit = best is not None and (best_iou > iou_threshold if strict else best_iou >= iou_threshold)
        if hit:
            matched[best] = True
        verdicts.append(Verdict(p, hit, best if hit else None, best_iou))
    return MatchResult(tuple(verdicts), matched.count(False), iou_threshold)


@dataclass(frozen=True)
class PRCurve:
    points: tuple[tuple[float, float], ...]  # (recall, precision) per ranked prediction
    gt_count: int


def pr_curve(verdicts: Iterable, gt_count: int) -> PRCurve:
    """Cumulative precision/recall after each ranked prediction.

    ``verdicts`` is a MatchResult, Verdict objects, or plain TP booleans,
    already in descending-confidence order.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be >= 0")
    if isinstance(verdicts, MatchResult):
        verdicts = verdicts.verdicts
    if gt_count == 0:
        return PRCurve((), 0)
    points = []
    tp = 0
    for k, v in enumerate(verdicts, start=1):
        tp += bool(v.tp if isinstance(v, Verdict) else v)
        points.append((tp / gt_count, tp / k))
    return PRCurve(tuple(points), gt_count)


def precision_envelope(curve: PRCurve) -> list[tuple[float, float]]:
    """(recall, max precision at recall >= that point), one entry per curve point."""
    env = []
    best = 0.0
    for r, p in reversed(curve.points):
        best = max(best, p)
        env.append((r, best))
    return env[::-1]


def average_precision(curve: PRCurve, method: str = "all") -> float:
    """Area under the interpolated precision envelope.

    ``method="all"`` integrates the step envelope over every recall change;
    ``method="11point"`` averages it at recall 0, 0.1, ..., 1.
    """
    if method == "11point":
        env = precision_envelope(curve)
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            total += max((p for r, p in env if r >= t), default=0.0)
        return total / 11
    if method != "all":
        raise ValueError(f"unknown AP method {method!r}")
    ap = 0.0
    prev_r = 0.0
    for r, p in precision_envelope(curve):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return ap


@dataclass(frozen=True)
class ClassAP:
    defect_class: DefectClass
    ap: float | None  # None when the class has no ground truth
    gt_count: int = 0

    @property
    def present(self) -> bool:
        return self.ap is not None


@dataclass
class ClassCounts:
    gt: int = 0
    pred: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        return {"gt": self.gt, "pred": self.pred, "tp": self.tp, "fp": self.fp, "fn": self.fn}


def map50(class_aps: Iterable[ClassAP] | Mapping) -> float:
    """Mean AP over classes with at least one ground truth."""
    if isinstance(class_aps, Mapping):
        class_aps = class_aps.values()
    present = [c.ap if isinstance(c, ClassAP) else c for c in class_aps]
    present = [ap for ap in present if ap is not None]
    if not present:
        raise NoGroundTruth("no class has ground truth")
    return sum(present) / len(present)


def evaluate_detections(predictions: Iterable[Prediction], annotations: Iterable[Annotation], *,
                        iou_threshold: float = 0.5, strict: bool = False,
                        width: int = 1, height: int = 1, ap_method: str = "all"):
    """Pool detections across slices and score each class.

    Returns:
        (class_aps, counts): dicts keyed by DefectClass holding ClassAP and
        ClassCounts for all four classes.
    """
    preds = defaultdict(list)
    gts = defaultdict(list)
    for p in predictions:
        preds[p.defect_class, p.slice_index].append(p)
    for a in annotations:
        gts[a.defect_class, a.slice_index].append(a)

    class_aps = {}
    counts = {}
    for cls in DefectClass:
        ranked = []
        c = ClassCounts()
        slices = sorted({z for k, z in preds if k == cls} | {z for k, z in gts if k == cls})
        for z in slices:
            result = match_detections(preds.get((cls, z), []), gts.get((cls, z), []),
                                      iou_threshold, strict=strict, width=width, height=height)
            for rank, v in enumerate(result.verdicts):
                ranked.append((-v.prediction.confidence, z, rank, v.tp))
            c.gt += len(gts.get((cls, z), []))
            c.tp += result.tp
            c.fp += result.fp
            c.fn += result.fn
        c.pred = c.tp + c.fp
        ranked.sort()
        if c.gt:
            ap = average_precision(pr_curve([tp for *_, tp in ranked], c.gt), ap_method)
        else:
            ap = None
        class_aps[cls] = ClassAP(cls, ap, c.gt)
        counts[cls] = c
    return class_aps, counts
