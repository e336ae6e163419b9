"""Minimal static SVG plots (scatter and line series on linear axes)."""

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22")


@dataclass
class Series:
    label: str
    x: list
    y: list
    color: str = "#000000"
    marker: str = "dot"  # "dot", "cross" or "none"
    line: bool = False
    labels: list = field(default=None)  # optional per-point annotations


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step / 2, step)


def plot(path, series, title="", xlabel="", ylabel="", equal=False, width=640, height=480):
    """Write ``series`` to an SVG file at ``path``."""
    xs = np.concatenate([np.asarray(s.x, float) for s in series if len(s.x)] or [np.zeros(1)])
    ys = np.concatenate([np.asarray(s.y, float) for s in series if len(s.y)] or [np.zeros(1)])
    ok = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = (xs[ok], ys[ok]) if ok.any() else (np.zeros(1), np.zeros(1))
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    pad_x = 0.05 * (x1 - x0 or 1.0)
    pad_y = 0.05 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    if equal:
        span = max(x1 - x0, (y1 - y0) * pw / ph)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        x0, x1 = cx - span / 2, cx + span / 2
        y0, y1 = cy - span * ph / pw / 2, cy + span * ph / pw / 2

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.1f}" y1="{top + ph}" x2="{sx(t):.1f}" y2="{top + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{top + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{sy(t):.1f}" x2="{left}" y2="{sy(t):.1f}" stroke="#444"/>')
        out.append(f'<text x="{left - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">{escape(ylabel)}</text>'
    )
    out.append(f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="13">{escape(title)}</text>')

    for idx, s in enumerate(series):
        px = [(sx(a), sy(b)) for a, b in zip(s.x, s.y) if np.isfinite(a) and np.isfinite(b)]
        if s.line and len(px) > 1:
            d = " ".join(f"{a:.1f},{b:.1f}" for a, b in px)
            out.append(f'<polyline points="{d}" fill="none" stroke="{s.color}" stroke-width="1.2"/>')
        for a, b in px:
            if s.marker == "dot":
                out.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="2.5" fill="{s.color}"/>')
            elif s.marker == "cross":
                out.append(
                    f'<path d="M{a - 3:.1f},{b - 3:.1f}L{a + 3:.1f},{b + 3:.1f}M{a - 3:.1f},{b + 3:.1f}L{a + 3:.1f},{b - 3:.1f}" stroke="{s.color}"/>'
                )
        if s.labels:
            for (a, b), lab in zip(px, s.labels):
                out.append(f'<text x="{a + 4:.1f}" y="{b - 4:.1f}" font-size="8" fill="{s.color}">{escape(str(lab))}</text>')
        ly = top + 12 + 16 * idx
        out.append(f'<circle cx="{left + pw + 15}" cy="{ly - 4}" r="3" fill="{s.color}"/>')
        out.append(f'<text x="{left + pw + 24}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
