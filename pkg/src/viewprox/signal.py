"""Distance-trace preprocessing: filtering, gap markers, normalization, chunking.

Missing samples are NaN until ``encode_gaps`` turns them into the 0.0
marker. Markers are never rescaled.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from viewprox.errors import BadSigma, BadWindow, DegenerateTrace
from viewprox.trace import DistanceTrace

MARKER = 0.0
CHUNK_LENGTH = 100
MEDIAN_WINDOW = 11
GAUSSIAN_SIGMA = 2.0


def _padded_windows(values: np.ndarray, radius: int) -> np.ndarray:
    padded = np.concatenate([np.full(radius, np.nan), values, np.full(radius, np.nan)])
    return sliding_window_view(padded, 2 * radius + 1)


def median_filter(values, window: int = MEDIAN_WINDOW) -> np.ndarray:
    """Centered running median over the finite samples of each window.

    Windows are truncated at the ends. A window without any finite sample
    yields a missing output.
    """
    if not isinstance(window, (int, np.integer)) or window < 3 or window % 2 == 0:
        raise BadWindow(f"window must be an odd integer >= 3, got {window!r}")
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return x.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(_padded_windows(x, window // 2), axis=1)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4 * sigma)
    t = np.arange(-radius, radius + 1)
    return np.exp(-0.5 * (t / sigma) ** 2)


def gaussian_smooth(values, sigma: float = GAUSSIAN_SIGMA) -> np.ndarray:
    """Gaussian smoothing renormalized over the finite samples in reach.

    The kernel is truncated at ceil(4 sigma). Missing samples stay missing.
    The weighted mean is taken of offsets from the centre sample so that
    constant stretches come out bit-identical.
    """
    if not (isinstance(sigma, (int, float, np.floating)) and sigma > 0 and math.isfinite(sigma)):
        raise BadSigma(f"sigma must be positive, got {sigma!r}")
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return x.copy()
    w = gaussian_kernel(sigma)
    radius = len(w) // 2
    win = _padded_windows(x, radius)
    finite = np.isfinite(win)
    dev = np.where(finite, win - x[:, None], 0.0)
    wsum = (finite * w).sum(axis=1)
    with np.errstate(invalid="ignore"):
        out = x + (dev * w).sum(axis=1) / wsum
    out[~np.isfinite(x)] = np.nan
    return out


def encode_gaps(values) -> np.ndarray:
    """Replace missing samples by the marker and collapse marker runs to one."""
    x = np.asarray(values, dtype=float)
    x = np.where(np.isfinite(x), x, MARKER)
    if x.size == 0:
        return x
    is_marker = x == MARKER
    keep = ~is_marker
    keep[0] = True
    keep[1:] |= ~is_marker[:-1]
    return x[keep]


def normalize_subject(values) -> np.ndarray:
    """Z-score the non-marker samples with their mean and population std."""
    x = np.asarray(values, dtype=float)
    mask = x != MARKER
    valid = x[mask]
    if valid.size < 2:
        raise DegenerateTrace("need at least two non-marker samples")
    mu = valid.mean()
    sd = valid.std()
    if not sd > 0:
        raise DegenerateTrace("trace has zero variance")
    out = np.full_like(x, MARKER)
    out[mask] = (valid - mu) / sd
    return out


@dataclass
class ChunkSet:
    subject_id: str
    label: str | None
    chunks: np.ndarray  # (n_chunks, length)
    frame_count_original: int

    @property
    def usable(self) -> bool:
        return len(self.chunks) > 0


def chunk(values, length: int = CHUNK_LENGTH) -> np.ndarray:
    """Contiguous non-overlapping windows; a short tail is dropped."""
    if length < 1:
        raise ValueError("chunk length must be positive")
    x = np.asarray(values, dtype=float)
    n = len(x) // length
    return x[: n * length].reshape(n, length)


@dataclass
class PreprocessConfig:
    median_window: int = MEDIAN_WINDOW
    gaussian_sigma: float = GAUSSIAN_SIGMA
    chunk_length: int = CHUNK_LENGTH
    normalize: bool = True


@dataclass
class ProcessedTrace:
    subject_id: str
    label: str | None
    values: np.ndarray
    frame_count_original: int
    chunks: ChunkSet = field(repr=False, default=None)


def preprocess(trace: DistanceTrace, config: PreprocessConfig | None = None) -> ProcessedTrace:
    """filter -> encode gaps -> (optionally) normalize -> chunk."""
    config = config or PreprocessConfig()
    x = median_filter(trace.values, config.median_window)
    x = gaussian_smooth(x, config.gaussian_sigma)
    x = encode_gaps(x)
    if config.normalize:
        x = normalize_subject(x)
    chunks = ChunkSet(trace.subject_id, trace.label, chunk(x, config.chunk_length), trace.frame_count)
    return ProcessedTrace(trace.subject_id, trace.label, x, trace.frame_count, chunks)


def processed_to_record(p: ProcessedTrace) -> dict:
    return {
        "subject_id": p.subject_id,
        "label": p.label,
        "frame_count_original": p.frame_count_original,
        "values": p.values.tolist(),
        "chunk_length": int(p.chunks.chunks.shape[1]) if p.chunks.usable else None,
        "chunks": p.chunks.chunks.tolist(),
        "usable": p.chunks.usable,
    }


def processed_from_record(rec: dict) -> ProcessedTrace:
    chunks = np.array(rec["chunks"], dtype=float)
    if chunks.size == 0:
        chunks = chunks.reshape(0, rec.get("chunk_length") or CHUNK_LENGTH)
    cs = ChunkSet(rec["subject_id"], rec["label"], chunks, int(rec["frame_count_original"]))
    return ProcessedTrace(rec["subject_id"], rec["label"], np.array(rec["values"], dtype=float),
                          int(rec["frame_count_original"]), cs)


def write_processed(path: str | Path, items: list[ProcessedTrace]) -> None:
    with open(path, "w") as fh:
        for p in items:
            fh.write(json.dumps(processed_to_record(p)) + "\n")


def read_processed(path: str | Path) -> list[ProcessedTrace]:
    with open(path) as fh:
        return [processed_from_record(json.loads(line)) for line in fh if line.strip()]
