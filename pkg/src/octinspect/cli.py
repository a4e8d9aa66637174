"""Command line entry point: convert, synth, detect, eval, loo, render.

Exit status: 0 success, 1 usage error, 2 data or processing error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .annotations import DatasetManifest, DefectClass, read_label_dir, read_prediction_dir, write_prediction_dir
from .detector import DetectorConfig, detect_volume
from .errors import BadConfig, OctInspectError, SliceOutOfRange
from .experiment import Fold, emit_report, evaluate_fold, run_loo, validate_manifest_paths
from .render import render_overlay
from .synth import DefectSpec, SynthConfig, dataset_configs, write_dataset
from .volume_io import import_slice_dir, load_ovf, save_ovf

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("octinspect")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _odd(text: str) -> int:
    k = int(text)
    if k < 1 or k % 2 == 0:
        raise argparse.ArgumentTypeError(f"{k} is not a positive odd integer")
    return k


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"{n} must be >= 1")
    return n


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    d = DetectorConfig()
    g = p.add_argument_group("baseline detector")
    g.add_argument("--median-k", type=_odd, default=d.median_k, help="speckle median kernel for surface finding")
    g.add_argument("--bg-k", type=_odd, default=d.bg_k, help="background median kernel")
    g.add_argument("--z-thresh", type=float, default=d.z_thresh, help="anomaly threshold in residual std-devs")
    g.add_argument("--min-area", type=_positive_int, default=d.min_area, help="smallest component kept (px)")
    g.add_argument("--connectivity", type=int, choices=(4, 8), default=d.connectivity)
    g.add_argument("--surface-band", type=int, default=d.surface_band, help="rows from the surface counted as touching")
    g.add_argument("--crack-elongation", type=float, default=d.crack_elongation)
    g.add_argument("--surface-theta", type=float, default=d.surface_theta, help="surface threshold on the normalized slice")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--predictions", type=Path, default=None,
                   help="directory of <volume_id>/slice_<z>.txt prediction files; baseline detector if omitted")
    p.add_argument("--iou-threshold", type=float, default=0.5, help="IoU needed for a true positive")
    p.add_argument("--iou-strict", action="store_true", help="require IoU > threshold instead of >=")
    p.add_argument("--ap-method", choices=("all", "11point"), default="all", help="AP interpolation")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table", help="report format")
    p.add_argument("--force-square", action="store_true", help="reject non-square ground-truth boxes")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel workers (timing forces 1)")
    p.add_argument("--no-timing", action="store_true", help="skip per-slice inference timing")
    _add_detector_flags(p)


def _detector_config(args) -> DetectorConfig:
    try:
        return DetectorConfig(
            median_k=args.median_k, bg_k=args.bg_k, z_thresh=args.z_thresh, min_area=args.min_area,
            connectivity=args.connectivity, surface_band=args.surface_band,
            crack_elongation=args.crack_elongation, surface_theta=args.surface_theta)
    except BadConfig as exc:
        raise UsageError(str(exc)) from None


def _require(path: Path, kind: str = "file") -> None:
    ok = path.is_dir() if kind == "dir" else path.is_file()
    if not ok:
        raise UsageError(f"{path}: {kind} not found")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="octinspect", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="stack a directory of PGM slices into an OVF volume", formatter_class=fmt)
    p.add_argument("slice_dir", type=Path)
    p.add_argument("out_ovf", type=Path)
    p.add_argument("--id", default=None, help="volume id (default: output file stem)")

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth", formatter_class=fmt)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--config", type=Path, default=None, help="SynthConfig JSON; overrides the shape flags below")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--volumes", type=_positive_int, default=3)
    p.add_argument("--name", default="synthetic", help="dataset name")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--depth", type=_positive_int, default=12)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--speckle", action="store_true", help="add multiplicative noise")
    p.add_argument("--contrast", type=float, default=0.5, help="defect contrast magnitude")
    p.add_argument("--voids", type=int, default=8)
    p.add_argument("--cracks", type=int, default=0)
    p.add_argument("--surface-irregularities", type=int, default=0)
    p.add_argument("--agglomerates", type=int, default=0)

    p = sub.add_parser("detect", help="run the baseline detector on a volume", formatter_class=fmt)
    p.add_argument("volume", type=Path)
    p.add_argument("out_dir", type=Path, help="prediction files are written here")
    p.add_argument("--jobs", type=_positive_int, default=1)
    _add_detector_flags(p)

    p = sub.add_parser("eval", help="evaluate one volume of a manifest", formatter_class=fmt)
    p.add_argument("manifest", type=Path)
    p.add_argument("--volume", required=True, help="volume id to evaluate")
    _add_eval_flags(p)

    p = sub.add_parser("loo", help="leave-one-out evaluation over a manifest", formatter_class=fmt)
    p.add_argument("manifest", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--model-name", default=None, help="label row above the folds in the table")
    _add_eval_flags(p)

    p = sub.add_parser("render", help="draw boxes over one slice as a PPM image", formatter_class=fmt)
    p.add_argument("volume", type=Path)
    p.add_argument("z", type=int)
    p.add_argument("out_image", type=Path)
    p.add_argument("--labels", type=Path, default=None, help="label directory (green boxes)")
    p.add_argument("--predictions", type=Path, default=None, help="prediction directory (red boxes)")
    return parser


def cmd_convert(args) -> int:
    _require(args.slice_dir, "dir")
    volume = import_slice_dir(args.slice_dir, args.id or args.out_ovf.stem)
    save_ovf(volume, args.out_ovf)
    print(f"wrote {args.out_ovf} ({volume.width}x{volume.height}x{volume.depth}, {volume.bit_depth}-bit)")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.config is not None:
        _require(args.config)
        try:
            doc = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        base = SynthConfig.from_dict(doc)
    else:
        c = abs(args.contrast)
        counts = [(DefectClass.VOID, args.voids, -c), (DefectClass.CRACK, args.cracks, -c),
                  (DefectClass.SURFACE_IRREGULARITY, args.surface_irregularities, c),
                  (DefectClass.AGGLOMERATE, args.agglomerates, c)]
        base = SynthConfig(
            seed=args.seed, width=args.width, height=args.height, depth=args.depth,
            noise_sigma=args.noise_sigma, speckle=args.speckle,
            defects=tuple(DefectSpec(k, n, contrast=ct) for k, n, ct in counts if n > 0))
    manifest = write_dataset(dataset_configs(base, args.volumes), args.out_dir, args.name)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_detect(args) -> int:
    _require(args.volume)
    cfg = _detector_config(args)
    volume = load_ovf(args.volume)
    by_slice, _ = detect_volume(volume, cfg, jobs=args.jobs)
    write_prediction_dir(by_slice, args.out_dir, depth=volume.depth)
    n = sum(len(v) for v in by_slice.values())
    print(f"{n} predictions over {volume.depth} slices written to {args.out_dir}")
    return EXIT_OK


def _source(args):
    if args.predictions is not None:
        _require(args.predictions, "dir")
        return args.predictions
    return _detector_config(args)


def _eval_kw(args) -> dict:
    return dict(iou_threshold=args.iou_threshold, strict=args.iou_strict,
                ap_method=args.ap_method, force_square=args.force_square)


def cmd_eval(args) -> int:
    _require(args.manifest)
    manifest = DatasetManifest.load(args.manifest)
    source = _source(args)
    manifest.entry(args.volume)
    validate_manifest_paths(manifest)
    others = tuple(v for v in manifest.volume_ids if v != args.volume)
    report = evaluate_fold(Fold(others, args.volume), manifest, source,
                           timing=not args.no_timing, jobs=args.jobs, **_eval_kw(args))
    sys.stdout.write(emit_report([report], args.format))
    return EXIT_OK


def cmd_loo(args) -> int:
    _require(args.manifest)
    manifest = DatasetManifest.load(args.manifest)
    source = _source(args)
    result = run_loo(manifest, source, args.out_dir, jobs=args.jobs, timing=not args.no_timing,
                     model_name=args.model_name, **_eval_kw(args))
    if result.reports:
        if args.format == "table":
            sys.stdout.write((args.out_dir / "report.txt").read_text())
        else:
            sys.stdout.write(emit_report(result.reports, args.format))
    for label, msg in result.failures.items():
        print(f"error: fold '{label}' FAILED: {msg}", file=sys.stderr)
    return EXIT_DATA if result.failures else EXIT_OK


def cmd_render(args) -> int:
    _require(args.volume)
    for d in (args.labels, args.predictions):
        if d is not None:
            _require(d, "dir")
    volume = load_ovf(args.volume)
    if not 0 <= args.z < volume.depth:
        raise SliceOutOfRange(f"slice {args.z} outside [0, {volume.depth})")
    gts = read_label_dir(args.labels).get(args.z, []) if args.labels else []
    preds = read_prediction_dir(args.predictions).get(args.z, []) if args.predictions else []
    try:
        args.out_image.write_bytes(render_overlay(volume, args.z, gts, preds))
    except OSError as exc:
        raise OctInspectError(f"{args.out_image}: {exc}") from exc
    return EXIT_OK


COMMANDS = {
    "convert": cmd_convert,
    "synth": cmd_synth,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "loo": cmd_loo,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OctInspectError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
