"""Per-frame distance traces and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from viewprox import CLASSES

# Videos run at most 80 s, i.e. 2400 frames at 30 fps.
MAX_FRAMES = 2400


@dataclass
class DistanceTrace:
    """Viewer-to-camera distance in cm, one entry per video frame.

    Missing frames are stored as NaN.
    """

    values: np.ndarray
    subject_id: str = ""
    label: str | None = None
    frames: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.frames is None:
            self.frames = np.arange(len(self.values))
        self.frames = np.asarray(self.frames, dtype=int).reshape(-1)
        if len(self.frames) != len(self.values):
            raise ValueError("frames and values differ in length")
        if len(self.values) > MAX_FRAMES:
            raise ValueError(f"trace has {len(self.values)} frames, limit is {MAX_FRAMES}")
        finite = self.values[np.isfinite(self.values)]
        if np.any(finite <= 0):
            raise ValueError("distances must be positive")
        if np.any(np.isinf(self.values)):
            raise ValueError("distances must be finite or missing")
        if self.label is not None and self.label not in CLASSES:
            raise ValueError(f"unknown label {self.label!r}")

    @property
    def frame_count(self) -> int:
        return len(self.values)

    @property
    def valid_ratio(self) -> float:
        if not len(self.values):
            return 0.0
        return float(np.isfinite(self.values).mean())


def format_trace_csv(trace: DistanceTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "distance_cm"])
    for frame, value in zip(trace.frames, trace.values):
        writer.writerow([int(frame), repr(float(value)) if np.isfinite(value) else ""])
    return buf.getvalue()


def write_trace_csv(path: str | Path, trace: DistanceTrace) -> None:
    Path(path).write_text(format_trace_csv(trace))


def read_trace_csv(path: str | Path, subject_id: str = "", label: str | None = None) -> DistanceTrace:
    frames, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["frame", "distance_cm"]:
            raise ValueError(f"{path}: expected header 'frame,distance_cm'")
        for row in reader:
            frames.append(int(row["frame"]))
            cell = (row["distance_cm"] or "").strip()
            values.append(float(cell) if cell else np.nan)
    return DistanceTrace(np.array(values, dtype=float), subject_id=subject_id, label=label, frames=np.array(frames, dtype=int))
