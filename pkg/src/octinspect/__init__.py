"""Defect inspection toolchain for volumetric OCT scans."""

__version__ = "0.1.0"

from .annotations import (
    Annotation,
    BoundingBox,
    DatasetManifest,
    DefectClass,
    Prediction,
    Rect,
    count_by_class,
    parse_label_file,
    to_absolute,
    write_label_file,
)
from .detector import DetectorConfig, detect_slice, detect_volume
from .experiment import EvalReport, Fold, emit_report, evaluate_fold, make_loo_splits, run_loo
from .metrics import average_precision, iou, map50, match_detections, pr_curve
from .synth import DefectSpec, SynthConfig, generate, snr_of
from .volume_io import SliceView, Volume, import_slice_dir, load_ovf, save_ovf
