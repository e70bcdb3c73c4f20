"""Dependency-free SVG line plot of distance against frame number."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def trace_svg(frames, series: dict[str, np.ndarray], width: int = 720, height: int = 360) -> str:
    """SVG with one polyline per series; NaN samples break the line."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    left, right, top, bottom = 60, 20, 20, 45
    frames = np.asarray(frames, dtype=float)
    finite = np.concatenate([v[np.isfinite(v)] for v in series.values()] or [np.array([0.0])])
    ylo, yhi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    pad = 0.05 * (yhi - ylo or 1.0)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(frames.min()), float(frames.max()) if len(frames) > 1 else float(frames.min()) + 1

    def sx(x):
        return left + (x - xlo) / ((xhi - xlo) or 1) * (width - left - right)

    def sy(y):
        return height - bottom - (y - ylo) / (yhi - ylo) * (height - top - bottom)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{width - left - right}" height="{height - top - bottom}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(xlo, xhi):
        out.append(f'<text x="{sx(t):.1f}" y="{height - bottom + 15}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{(left + width - right) / 2}" y="{height - 8}" text-anchor="middle">Frame</text>')
    out.append(
        f'<text x="14" y="{(top + height - bottom) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(top + height - bottom) / 2})">Distance (cm)</text>'
    )
    for i, (name, values) in enumerate(series.items()):
        color = colors[i % len(colors)]
        segment: list[str] = []
        for x, y in zip(frames, np.asarray(values, dtype=float)):
            if np.isfinite(y):
                segment.append(f"{sx(x):.1f},{sy(y):.1f}")
            elif segment:
                out.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(segment)}"/>')
                segment = []
        if segment:
            out.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(segment)}"/>')
        out.append(f'<text x="{width - right - 6}" y="{top + 14 + 14 * i}" text-anchor="end" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_trace_svg(path: str | Path, frames, series: dict[str, np.ndarray]) -> None:
    Path(path).write_text(trace_svg(frames, series))
