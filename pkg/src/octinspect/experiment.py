"""Leave-one-out evaluation over a dataset manifest, with text, CSV and JSON reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from .annotations import (
    DatasetManifest,
    DefectClass,
    check_square,
    read_label_dir,
    read_prediction_dir,
    write_prediction_dir,
)
from .detector import DetectorConfig, detect_volume
from .errors import (
    IoFailure,
    ManifestError,
    MissingLabels,
    MissingPredictions,
    NoGroundTruth,
    OctInspectError,
    SliceOutOfRange,
    TooFewVolumes,
)
from .metrics import ClassCounts, evaluate_detections, map50
from .volume_io import load_ovf

log = logging.getLogger(__name__)

WARMUP_SLICES = 3

COLUMN_TITLES = {
    DefectClass.VOID: "Voids",
    DefectClass.CRACK: "Cracks",
    DefectClass.SURFACE_IRREGULARITY: "Surface irreg.",
    DefectClass.AGGLOMERATE: "Agglom.",
}


@dataclass(frozen=True)
class Fold:
    train_volume_ids: tuple[str, ...]
    eval_volume_id: str

    def __post_init__(self):
        if self.eval_volume_id in self.train_volume_ids:
            raise ValueError(f"{self.eval_volume_id} is both trained on and evaluated")

    @property
    def label(self) -> str:
        return f"train {' '.join(self.train_volume_ids)} - inference {self.eval_volume_id}"


def make_loo_splits(volume_ids: Sequence[str]) -> list[Fold]:
    """One fold per volume: evaluate it, train on the others (input order kept)."""
    ids = list(volume_ids)
    if len(ids) < 2:
        raise TooFewVolumes(f"leave-one-out needs >= 2 volumes, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("volume ids must be unique")
    return [Fold(tuple(ids[:i] + ids[i + 1:]), v) for i, v in enumerate(ids)]


@dataclass(frozen=True)
class RunMetadata:
    detector: str
    hyperparameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"detector": self.detector, "hyperparameters": dict(self.hyperparameters)}


@dataclass
class EvalReport:
    fold: str
    class_aps: dict[DefectClass, float | None]
    map50: float | None
    counts: dict[DefectClass, ClassCounts]
    train_time_hours: float | None = None
    inference_ms_per_slice: float | None = None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "class_aps": {c.key: self.class_aps.get(c) for c in DefectClass},
            "map50": self.map50,
            "counts": {c.key: self.counts.get(c, ClassCounts()).to_dict() for c in DefectClass},
            "train_time_hours": self.train_time_hours,
            "inference_ms_per_slice": self.inference_ms_per_slice,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> EvalReport:
        return cls(
            fold=doc["fold"],
            class_aps={DefectClass.from_key(k): v for k, v in doc["class_aps"].items()},
            map50=doc["map50"],
            counts={DefectClass.from_key(k): ClassCounts(**v) for k, v in doc["counts"].items()},
            train_time_hours=doc.get("train_time_hours"),
            inference_ms_per_slice=doc.get("inference_ms_per_slice"),
        )


PredictionSource = Union[DetectorConfig, Path, str]


def _read_run_file(pred_dir: Path) -> dict:
    """Optional ``run.json`` next to imported predictions.

    Shape: {"detector": str, "hyperparameters": {...},
            "folds": {eval_volume_id: {"train_time_hours": h, "inference_ms_per_slice": ms}}}
    """
    path = pred_dir / "run.json"
    if not path.is_file():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def run_metadata(source: PredictionSource) -> RunMetadata:
    if isinstance(source, DetectorConfig):
        return RunMetadata("baseline", source.to_dict())
    doc = _read_run_file(Path(source))
    return RunMetadata(doc.get("detector", "imported"), doc.get("hyperparameters", {}))


def evaluate_fold(fold: Fold, manifest: DatasetManifest, source: PredictionSource, *,
                  iou_threshold: float = 0.5, strict: bool = False, ap_method: str = "all",
                  timing: bool = True, jobs: int = 1, force_square: bool = False,
                  predictions_out: Path | None = None) -> EvalReport:
    """Score one fold's evaluation volume.

    ``source`` is a DetectorConfig (run the baseline; its "training" is a
    no-op) or a directory holding ``<volume_id>/slice_<z>.txt`` prediction
    files.  Detections are pooled over every slice of the volume.
    """
    vid = fold.eval_volume_id
    volume = load_ovf(manifest.volume_path(vid), vid)
    labels = read_label_dir(manifest.labels_dir(vid))
    annotations = []
    for z, items in labels.items():
        if z >= volume.depth:
            raise SliceOutOfRange(f"{manifest.labels_dir(vid)}: label for slice {z}, volume depth {volume.depth}")
        if force_square:
            for a in items:
                check_square(a.box, volume.width, volume.height)
        annotations.extend(items)

    train_hours = None
    inference_ms = None
    if isinstance(source, DetectorConfig):
        by_slice, slice_ms = detect_volume(volume, source, jobs=jobs, timing=timing)
        if slice_ms:
            measured = slice_ms[WARMUP_SLICES:] if len(slice_ms) > WARMUP_SLICES else slice_ms
            inference_ms = sum(measured) / len(measured)
        if predictions_out is not None:
            write_prediction_dir(by_slice, Path(predictions_out) / vid, depth=volume.depth)
    else:
        pred_dir = Path(source)
        vol_dir = pred_dir / vid
        if not vol_dir.is_dir():
            raise MissingPredictions(f"{vol_dir}: no predictions for volume {vid}")
        by_slice = read_prediction_dir(vol_dir)
        for z in by_slice:
            if z >= volume.depth:
                raise SliceOutOfRange(f"{vol_dir}: prediction for slice {z}, volume depth {volume.depth}")
        passthrough = _read_run_file(pred_dir).get("folds", {}).get(vid, {})
        train_hours = passthrough.get("train_time_hours")
        inference_ms = passthrough.get("inference_ms_per_slice")
    predictions = [p for z in sorted(by_slice) for p in by_slice[z]]

    class_aps, counts = evaluate_detections(
        predictions, annotations, iou_threshold=iou_threshold, strict=strict,
        width=volume.width, height=volume.height, ap_method=ap_method)
    try:
        m = map50(class_aps)
    except NoGroundTruth:
        log.warning("%s: no ground truth in any class", fold.label)
        m = None
    return EvalReport(fold.label, {c: a.ap for c, a in class_aps.items()}, m, counts,
                      train_hours, inference_ms)


def validate_manifest_paths(manifest: DatasetManifest) -> None:
    for v in manifest.volumes:
        vol = manifest.volume_path(v.volume_id)
        if not vol.is_file():
            raise ManifestError(f"{vol}: volume file not found")
        labels = manifest.labels_dir(v.volume_id)
        if not labels.is_dir():
            raise MissingLabels(f"{labels}: label directory not found")


@dataclass
class LooResult:
    reports: list[EvalReport]
    failures: dict[str, str]  # fold label -> error message
    labels: list[str]  # fold labels in order


def run_loo(manifest: DatasetManifest, source: PredictionSource, out_dir, *,
            jobs: int = 1, timing: bool = True, model_name: str | None = None, **eval_kw) -> LooResult:
    """Evaluate every leave-one-out fold and write per-fold and combined reports.

    Writes ``reports/fold_<id>.json`` (or ``fold_<id>.FAILED`` with the error),
    ``report.txt``, ``report.csv``, ``report.json`` and, for the baseline,
    ``predictions/<id>/``.  Timing forces sequential evaluation.
    """
    folds = make_loo_splits(manifest.volume_ids)
    validate_manifest_paths(manifest)
    out = Path(out_dir)
    reports_dir = out / "reports"
    try:
        reports_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    pred_out = out / "predictions" if isinstance(source, DetectorConfig) else None
    parallel = jobs > 1 and not timing

    def one(fold: Fold):
        try:
            return evaluate_fold(fold, manifest, source, timing=timing, predictions_out=pred_out,
                                 jobs=1 if parallel else jobs, **eval_kw)
        except OctInspectError as exc:
            return exc

    if parallel:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, folds))
    else:
        outcomes = [one(f) for f in folds]

    reports, failures = [], {}
    for fold, outcome in zip(folds, outcomes):
        stem = reports_dir / f"fold_{fold.eval_volume_id}"
        for stale in (stem.with_suffix(".json"), stem.with_suffix(".FAILED")):
            stale.unlink(missing_ok=True)
        if isinstance(outcome, Exception):
            msg = f"{type(outcome).__name__}: {outcome}"
            failures[fold.label] = msg
            stem.with_suffix(".FAILED").write_text(msg + "\n")
            log.error("fold %s failed: %s", fold.label, msg)
        else:
            reports.append(outcome)
            stem.with_suffix(".json").write_text(emit_report([outcome], "json"))
    labels = [f.label for f in folds]
    if reports:
        rows = _ordered_rows(reports, failures, labels)
        (out / "report.txt").write_text(_table(rows, model_name or run_metadata(source).detector))
        (out / "report.csv").write_text(emit_report(reports, "csv"))
        (out / "report.json").write_text(emit_report(reports, "json"))
        meta = dict(run_metadata(source).to_dict(), failed=sorted(failures))
        (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return LooResult(reports, failures, labels)


# report rendering

def fmt_ap(ap: float | None) -> str:
    """Three significant figures, trailing zeros dropped; absent -> "-"."""
    return "-" if ap is None else f"{ap:.3g}"


def fmt_time(train_hours: float | None, inference_ms: float | None) -> str:
    if train_hours is None and inference_ms is None:
        return "-"
    train = "-" if train_hours is None else f"{train_hours:.3f}h"
    infer = "-" if inference_ms is None else f"{inference_ms:.1f}ms"
    return f"{train}/{infer}"


def _ordered_rows(reports, failures, labels):
    """Reports in fold order; failed folds appear as their bare label."""
    by_label = {r.fold: r for r in reports}
    return [by_label.get(label, label) for label in labels]


def _table(rows, model_name: str | None = None) -> str:
    header = ["Model"] + [COLUMN_TITLES[c] for c in DefectClass] + ["Train/Inference time"]
    body = []
    for r in rows:
        if isinstance(r, EvalReport):
            body.append([r.fold] + [fmt_ap(r.class_aps.get(c)) for c in DefectClass]
                        + [fmt_time(r.train_time_hours, r.inference_ms_per_slice)])
        else:
            body.append([r, "FAILED"] + [""] * (len(header) - 2))
    widths = [len(h) for h in header]
    for cells in body:
        widths = [max(w, len(c)) for w, c in zip(widths, cells)]

    def line(cells):
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip() + "\n"

    out = [line(header), "-+-".join("-" * w for w in widths) + "\n"]
    if model_name:
        out.append(line([model_name] + [""] * (len(header) - 1)))
    out.extend(line(cells) for cells in body)
    return "".join(out)


CSV_FIELDS = (["fold"] + [c.key for c in DefectClass]
              + ["map50", "train_time_hours", "inference_ms_per_slice"]
              + [f"{c.key}_{k}" for c in DefectClass for k in ("gt", "pred", "tp", "fp", "fn")])


def _num(v) -> str:
    return "" if v is None else repr(v)


def _csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in reports:
        row = [r.fold] + [_num(r.class_aps.get(c)) for c in DefectClass]
        row += [_num(r.map50), _num(r.train_time_hours), _num(r.inference_ms_per_slice)]
        for c in DefectClass:
            cc = r.counts.get(c, ClassCounts())
            row += [cc.gt, cc.pred, cc.tp, cc.fp, cc.fn]
        w.writerow(row)
    return buf.getvalue()


def emit_report(reports: Sequence[EvalReport], fmt: str = "table", model_name: str | None = None) -> str:
    """Render reports as an aligned text table, CSV or JSON.

    Table rows hold the fold label, one AP column per class ("-" when
    absent) and a "train/inference" time cell.
    """
    if not reports:
        raise ValueError("emit_report needs at least one report")
    if fmt == "table":
        return _table(list(reports), model_name)
    if fmt == "csv":
        return _csv(reports)
    if fmt == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> list[EvalReport]:
    def num(s):
        return None if s == "" else float(s)

    reports = []
    for row in csv.DictReader(io.StringIO(text)):
        counts = {c: ClassCounts(*(int(row[f"{c.key}_{k}"]) for k in ("gt", "pred", "tp", "fp", "fn")))
                  for c in DefectClass}
        reports.append(EvalReport(
            fold=row["fold"],
            class_aps={c: num(row[c.key]) for c in DefectClass},
            map50=num(row["map50"]),
            counts=counts,
            train_time_hours=num(row["train_time_hours"]),
            inference_ms_per_slice=num(row["inference_ms_per_slice"]),
        ))
    return reports


def parse_report_json(text: str) -> list[EvalReport]:
    return [EvalReport.from_dict(d) for d in json.loads(text)]
