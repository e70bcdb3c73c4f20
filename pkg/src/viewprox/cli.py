"""Command-line front end: estimate, preprocess, train, crossval, synth, report.

Parameter precedence is command-line flag, then ``--config`` JSON file,
then the module default. The effective configuration is written into
every report and checkpoint.

Exit codes: 0 success, 1 runtime/data error, 2 usage or validation
error, 3 no usable face in the landmark stream.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from viewprox import CLASSES, __version__
from viewprox import dataset as ds
from viewprox import evaluation as ev
from viewprox import geometry, model, signal, synth
from viewprox.errors import EmptyStream, InvalidSpec, ManifestError, ViewproxError
from viewprox.plot import trace_svg
from viewprox.trace import format_trace_csv

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_EMPTY = 0, 1, 2, 3

DEFAULTS = {
    "scheme": 2,
    "seed": 0,
    "median_window": signal.MEDIAN_WINDOW,
    "gaussian_sigma": signal.GAUSSIAN_SIGMA,
    "chunk_length": signal.CHUNK_LENGTH,
    "folds": 5,
    "eye": "mid",
    "max_epochs": 100,
    "patience": 10,
    "batch_size": 32,
    "learning_rate": 1e-3,
}
PRESETS = ("validation-30-50-30", "dataset-115")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temporary sibling so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def effective_config(args: argparse.Namespace, keys: list[str]) -> dict:
    cfg = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"config file {args.config}: {exc}", EXIT_USAGE) from exc
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise CliError(f"config file {args.config}: unknown keys {sorted(unknown)}", EXIT_USAGE)
        cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _preprocess_config(cfg: dict) -> signal.PreprocessConfig:
    return signal.PreprocessConfig(
        median_window=int(cfg["median_window"]),
        gaussian_sigma=float(cfg["gaussian_sigma"]),
        chunk_length=int(cfg["chunk_length"]),
        normalize=int(cfg["scheme"]) != 1,
    )


def _scheme_config(cfg: dict) -> model.SchemeConfig:
    try:
        return model.SchemeConfig.default(
            int(cfg["scheme"]),
            input_length=int(cfg["chunk_length"]),
            seed=int(cfg["seed"]),
            max_epochs=int(cfg["max_epochs"]),
            early_stop_patience=int(cfg["patience"]),
            batch_size=int(cfg["batch_size"]),
            learning_rate=float(cfg["learning_rate"]),
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def _load_subjects(manifest: str, cfg: dict) -> list[signal.ProcessedTrace]:
    try:
        subjects = ds.load_processed(manifest, _preprocess_config(cfg))
    except ManifestError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except OSError as exc:
        raise CliError(f"{manifest}: {exc}", EXIT_USAGE) from exc
    unusable = [s.subject_id for s in subjects if not s.chunks.usable]
    if unusable:
        raise CliError(f"subjects without a complete chunk: {', '.join(unusable)}", EXIT_USAGE)
    return subjects


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = effective_config(args, ["eye"])
    try:
        stream = geometry.read_landmarks(args.landmarks)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read landmark stream: {exc}", EXIT_USAGE) from exc
    try:
        trace = geometry.estimate_distance_trace(stream, eye=cfg["eye"])
    except EmptyStream as exc:
        raise CliError(f"no usable face: {exc}", EXIT_EMPTY) from exc
    atomic_write(args.out, format_trace_csv(trace))
    if args.plot:
        atomic_write(args.plot, trace_svg(trace.frames, {"estimate": trace.values}))
    finite = trace.values[np.isfinite(trace.values)]
    print(f"config: {json.dumps(cfg, sort_keys=True)}")
    print(f"frames: {trace.frame_count}")
    print(f"valid ratio: {trace.valid_ratio:.4f}")
    if finite.size:
        print(f"distance cm: min {finite.min():.2f} max {finite.max():.2f}")
    return EXIT_OK


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = effective_config(args, ["scheme", "median_window", "gaussian_sigma", "chunk_length"])
    try:
        items = ds.load_processed(args.manifest, _preprocess_config(cfg), require_labels=False)
    except ManifestError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    buf = io.StringIO()
    for p in items:
        buf.write(json.dumps(signal.processed_to_record(p)) + "\n")
    atomic_write(args.out, buf.getvalue())
    unusable = [p.subject_id for p in items if not p.chunks.usable]
    print(f"config: {json.dumps(cfg, sort_keys=True)}")
    print(f"subjects: {len(items)}, chunks: {sum(len(p.chunks.chunks) for p in items)}, unusable: {len(unusable)}")
    for sid in unusable:
        print(f"unusable: {sid} (shorter than one chunk)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    keys = ["scheme", "seed", "median_window", "gaussian_sigma", "chunk_length", "max_epochs", "patience",
            "batch_size", "learning_rate"]
    cfg = effective_config(args, keys)
    subjects = _load_subjects(args.manifest, cfg)
    scheme_cfg = _scheme_config(cfg)
    pairs = [(s.subject_id, s.label) for s in subjects]
    train_ids, val_ids = ev.split_train_val(pairs, int(cfg["seed"]))
    by_id = {s.subject_id: s for s in subjects}
    try:
        mdl, log = model.train(
            scheme_cfg,
            ev.chunk_data([by_id[i] for i in train_ids]),
            ev.chunk_data([by_id[i] for i in val_ids]),
        )
    except (ValueError, ArithmeticError) as exc:
        raise CliError(f"training failed: {exc}") from exc
    run_cfg = {**cfg, "manifest": str(args.manifest), "train_ids": train_ids, "val_ids": val_ids}
    atomic_write(args.out, model.model_json(mdl, run_cfg))
    if args.log:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for row in log:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss), repr(row.val_accuracy)])
        atomic_write(args.log, buf.getvalue())
    best = min(log, key=lambda r: r.val_loss)
    print(f"epochs: {len(log)}, best epoch {best.epoch}: val_loss {best.val_loss:.4f} val_accuracy {best.val_accuracy:.4f}")
    return EXIT_OK


def cmd_crossval(args: argparse.Namespace) -> int:
    keys = ["scheme", "seed", "median_window", "gaussian_sigma", "chunk_length", "folds", "max_epochs", "patience",
            "batch_size", "learning_rate"]
    cfg = effective_config(args, keys)
    subjects = _load_subjects(args.manifest, cfg)
    scheme_cfg = _scheme_config(cfg)
    try:
        report = ev.run_crossval(subjects, scheme_cfg, seed=int(cfg["seed"]), k=int(cfg["folds"]),
                                 extra_config={**cfg, "manifest": str(args.manifest)})
    except ev.TooFewSubjects as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except (ValueError, ArithmeticError) as exc:
        raise CliError(f"cross-validation failed: {exc}") from exc
    text = ev.report_json(report)
    summary = ev.format_summary(json.loads(text))
    atomic_write(args.report, text)
    if args.summary:
        atomic_write(args.summary, summary)
    if args.predictions:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject_id", "fold", "true", "predicted", *[f"p_{c}" for c in CLASSES], "n_chunks"])
        for s in report.subjects:
            writer.writerow([s.subject_id, s.fold, s.true_label, s.predicted, *map(repr, s.mean_probabilities), s.n_chunks])
        atomic_write(args.predictions, buf.getvalue())
    print(summary, end="")
    return EXIT_OK


def _write_stream_outputs(out_dir: Path, stem: str, spec: synth.TrajectorySpec, plot: bool) -> dict[str, str]:
    frames, truth = synth.generate_stream(synth.load_template(), spec)
    files: dict[str, str] = {}
    files[f"{stem}.landmarks.jsonl"] = "".join(json.dumps(geometry.frame_to_record(f)) + "\n" for f in frames)
    files[f"{stem}.truth.json"] = json.dumps({"spec": spec.to_dict(), **truth.to_dict()}) + "\n"
    if plot:
        files[f"{stem}.truth.svg"] = trace_svg(np.arange(len(frames)), {"ground truth": truth.distances})
    return files


def cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    files: dict[str, str] = {}
    if args.spec:
        try:
            spec = synth.load_spec(args.spec)
            if args.seed is not None:
                spec.seed = args.seed
            files = _write_stream_outputs(out_dir, Path(args.spec).stem, spec, args.plot)
        except InvalidSpec as exc:
            raise CliError(f"invalid spec: {exc}", EXIT_USAGE) from exc
    elif args.preset == "validation-30-50-30":
        spec = synth.validation_spec() if args.seed is None else synth.validation_spec(seed=args.seed)
        files = _write_stream_outputs(out_dir, "validation", spec, args.plot)
    elif args.preset == "dataset-115":
        records = synth.generate_dataset((37, 41, 37), seed=args.seed or 0)
        rows = []
        for r in records:
            files[f"traces/{r.subject_id}.csv"] = format_trace_csv(r.trace)
            files[f"truth/{r.subject_id}.json"] = json.dumps(
                {"subject_id": r.subject_id, "label": r.label, "spec": r.spec.to_dict(),
                 "distance_cm": r.truth.distances.tolist()}
            ) + "\n"
            if args.landmarks:
                frames, _ = synth.generate_stream(synth.load_template(), r.spec)
                files[f"landmarks/{r.subject_id}.jsonl"] = "".join(
                    json.dumps(geometry.frame_to_record(f)) + "\n" for f in frames
                )
            rows.append([r.subject_id, r.label, f"traces/{r.subject_id}.csv", r.trace.frame_count])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows([ds.MANIFEST_FIELDS, *rows])
        files["manifest.csv"] = buf.getvalue()
    else:
        raise CliError(f"unknown preset {args.preset!r}; choose from {PRESETS}", EXIT_USAGE)
    for name, text in sorted(files.items()):
        atomic_write(out_dir / name, text)
    print(f"wrote {len(files)} files to {out_dir}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read report: {exc}", EXIT_USAGE) from exc
    if doc.get("format") != ev.REPORT_VERSION:
        raise CliError(f"unsupported report format {doc.get('format')!r}", EXIT_USAGE)
    summary = ev.format_summary(doc)
    if args.out:
        atomic_write(args.out, summary)
    print(summary, end="")
    return EXIT_OK


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--median-window", type=int, dest="median_window")
    p.add_argument("--gaussian-sigma", type=float, dest="gaussian_sigma")
    p.add_argument("--chunk-length", type=int, dest="chunk_length")


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewprox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"viewprox {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="landmark stream -> distance trace CSV")
    p.add_argument("landmarks")
    p.add_argument("out")
    p.add_argument("--eye", choices=geometry.EYE_MODES)
    p.add_argument("--plot", metavar="SVG")
    p.add_argument("--config")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("preprocess", help="manifest -> processed traces and chunks (JSONL)")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--scheme", type=int, choices=(1, 2, 3))
    _add_preprocess_flags(p)
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model on a 7:1 subject split")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, metavar="MODEL_JSON")
    p.add_argument("--log", metavar="CSV")
    p.add_argument("--scheme", type=int, choices=(1, 2, 3))
    _add_preprocess_flags(p)
    _add_training_flags(p)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation report")
    p.add_argument("manifest")
    p.add_argument("--report", required=True, metavar="JSON")
    p.add_argument("--summary", metavar="TXT")
    p.add_argument("--predictions", metavar="CSV")
    p.add_argument("--scheme", type=int, choices=(1, 2, 3))
    p.add_argument("--folds", type=int)
    _add_preprocess_flags(p)
    _add_training_flags(p)
    p.add_argument("--config")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("synth", help="synthetic landmark streams, traces and manifests")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--spec", metavar="JSON")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--landmarks", action="store_true", help="also write per-subject landmark streams (dataset preset)")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="print the tables of a cross-validation report")
    p.add_argument("report")
    p.add_argument("--out", metavar="TXT")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"viewprox {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ViewproxError as exc:
        print(f"viewprox {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
