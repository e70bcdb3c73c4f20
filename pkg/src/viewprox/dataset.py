"""Dataset manifests: one CSV row per subject pointing at its distance trace."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from viewprox import CLASSES
from viewprox.errors import ManifestError
from viewprox.signal import PreprocessConfig, ProcessedTrace, preprocess
from viewprox.trace import DistanceTrace, read_trace_csv

MANIFEST_FIELDS = ["subject_id", "label", "trace_path", "frame_count"]


@dataclass
class ManifestEntry:
    subject_id: str
    label: str | None
    trace_path: Path
    frame_count: int


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    root = Path(path).parent
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            trace_path = Path(e.trace_path)
            try:
                trace_path = trace_path.relative_to(root)
            except ValueError:
                pass
            writer.writerow([e.subject_id, e.label or "", trace_path.as_posix(), e.frame_count])


def read_manifest(path: str | Path, require_labels: bool = True) -> list[ManifestEntry]:
    """Parse a manifest; trace paths are resolved relative to the manifest."""
    path = Path(path)
    root = path.parent
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(MANIFEST_FIELDS) <= set(reader.fieldnames):
            raise ManifestError(f"{path}: header must contain {MANIFEST_FIELDS}")
        for row in reader:
            sid = (row["subject_id"] or "").strip()
            if not sid:
                raise ManifestError(f"{path}: row without subject_id")
            if sid in seen:
                raise ManifestError(f"{path}: duplicate subject {sid}")
            seen.add(sid)
            label = (row["label"] or "").strip() or None
            if label is None and require_labels:
                raise ManifestError(f"subject {sid}: missing label")
            if label is not None and label not in CLASSES:
                raise ManifestError(f"subject {sid}: unknown label {label!r}")
            try:
                frame_count = int(row["frame_count"])
            except (TypeError, ValueError):
                raise ManifestError(f"subject {sid}: bad frame_count {row['frame_count']!r}") from None
            entries.append(ManifestEntry(sid, label, root / row["trace_path"], frame_count))
    if not entries:
        raise ManifestError(f"{path}: manifest lists no subjects")
    return entries


def load_trace(entry: ManifestEntry) -> DistanceTrace:
    trace = read_trace_csv(entry.trace_path, subject_id=entry.subject_id, label=entry.label)
    if trace.frame_count != entry.frame_count:
        raise ManifestError(
            f"subject {entry.subject_id}: manifest says {entry.frame_count} frames, trace has {trace.frame_count}"
        )
    return trace


def load_processed(path: str | Path, config: PreprocessConfig, require_labels: bool = True) -> list[ProcessedTrace]:
    """Read every trace of a manifest and run the preprocessing chain on it."""
    out = []
    for entry in read_manifest(path, require_labels):
        try:
            out.append(preprocess(load_trace(entry), config))
        except ValueError as exc:
            raise ManifestError(f"subject {entry.subject_id}: {exc}") from exc
    return out
