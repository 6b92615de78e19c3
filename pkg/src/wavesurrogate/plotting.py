"""Self-contained SVG line charts of validation MSE over epochs (log scale).

Curves are ``<polyline>`` elements and reference levels are horizontal
``<line>`` elements; axes, ticks and frame are drawn as ``<path>`` so the two
element kinds stay countable.  The padded log10 y-range is stored on the root
element as ``data-log-ymin`` / ``data-log-ymax``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 480
LEFT, RIGHT, TOP, BOTTOM = 80, 180, 30, 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


@dataclass
class Curve:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


def plot_area():
    return LEFT, TOP, WIDTH - RIGHT, HEIGHT - BOTTOM


def log_range(values: Sequence[float], pad: float = 0.05):
    """Padded ``(lo, hi)`` in log10 space spanning all positive finite values."""
    v = np.asarray([x for x in values if np.isfinite(x) and x > 0], dtype=np.float64)
    if v.size == 0:
        return -1.0, 0.0
    lo, hi = math.log10(v.min()), math.log10(v.max())
    span = hi - lo
    if span == 0.0:
        return lo - 0.5, hi + 0.5
    return lo - pad * span, hi + pad * span


def render_svg(curves: Sequence[Curve], references: Sequence[tuple] = (),
               title: str = "", ylabel: str = "validation MSE") -> str:
    if not curves:
        raise ValueError("nothing to plot")
    x0, y0, x1, y1 = plot_area()
    all_y = [v for c in curves for v in np.asarray(c.y)]
    all_y += [value for _, value in references]
    ylo, yhi = log_range(all_y)
    xs = np.concatenate([np.asarray(c.x, dtype=np.float64) for c in curves])
    xmin, xmax = float(xs.min()), float(xs.max())
    if xmax == xmin:
        xmax = xmin + 1.0

    def px(x):
        return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0)

    def py(y):
        return y1 - (math.log10(y) - ylo) / (yhi - ylo) * (y1 - y0)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" data-log-ymin="{ylo:.12g}" data-log-ymax="{yhi:.12g}" '
           f'data-xmin="{xmin:.12g}" data-xmax="{xmax:.12g}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y0 - 10}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    # decade ticks
    ticks = []
    for d in range(math.ceil(ylo), math.floor(yhi) + 1):
        y = y1 - (d - ylo) / (yhi - ylo) * (y1 - y0)
        ticks.append(f"M{x0 - 5},{y:.2f} L{x0},{y:.2f}")
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">1e{d}</text>')
    for k in range(6):
        xv = xmin + k * (xmax - xmin) / 5
        x = px(xv)
        ticks.append(f"M{x:.2f},{y1} L{x:.2f},{y1 + 5}")
        out.append(f'<text x="{x:.2f}" y="{y1 + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{xv:g}</text>')
    if ticks:
        out.append(f'<path d="{" ".join(ticks)}" stroke="black" fill="none"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">epoch</text>')
    out.append(f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>')

    legend_y = y0 + 10
    for k, (label, value) in enumerate(references):
        if not (np.isfinite(value) and value > 0):
            raise ValueError(f"reference level {label!r} must be positive, got {value}")
        y = py(value)
        color = "#555555"
        out.append(f'<line x1="{x0}" y1="{y:.3f}" x2="{x1}" y2="{y:.3f}" stroke="{color}" '
                   f'stroke-dasharray="2,3" data-label="{escape(label)}"/>')
        out.append(f'<text x="{x1 + 5}" y="{y + 4:.2f}" font-family="sans-serif" font-size="10" '
                   f'fill="{color}">{escape(label)}</text>')
    for k, c in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        pts = [f"{px(float(x)):.3f},{py(float(y)):.3f}"
               for x, y in zip(c.x, c.y) if np.isfinite(y) and y > 0]
        dash = ' stroke-dasharray="6,3"' if c.dashed else ""
        out.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"{dash} data-label="{escape(c.label)}"/>')
        ly = legend_y + 16 * k
        out.append(f'<path d="M{x1 + 10},{ly} L{x1 + 30},{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 35}" y="{ly + 4}" font-family="sans-serif" font-size="11">'
                   f'{escape(c.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_aggregate(path, column: str = "mean") -> Curve:
    """Load one aggregate CSV (``epoch,mean,median,geomean,n_diverged``)."""
    x, y = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: row 1: empty file")
        if "epoch" not in header or column not in header:
            raise ValueError(f"{path}: row 1: missing 'epoch' or {column!r} column")
        ie, iv = header.index("epoch"), header.index(column)
        for lineno, row in enumerate(reader, start=2):
            try:
                x.append(float(row[ie]))
                y.append(float(row[iv]))
            except (ValueError, IndexError):
                raise ValueError(f"{path}: row {lineno}: malformed values") from None
    if not x:
        raise ValueError(f"{path}: row 2: no data rows")
    return Curve(Path(path).parent.name or Path(path).stem, np.array(x), np.array(y))
