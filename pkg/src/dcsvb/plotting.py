"""Minimal self-contained SVG line charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

__all__ = ["line_chart_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf")


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart_svg(series, title="", xlabel="", ylabel="", logy=False,
                   width=640, height=420):
    """Render ``{name: (xs, ys)}`` as an SVG document string.

    Non-finite points (and non-positive ones on a log axis) are skipped.
    """
    left, right, top, bottom = 70, 190, 40, 55
    pw, ph = width - left - right, height - top - bottom

    def ty(v):
        return math.log10(v) if logy else v

    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(float(x), ty(float(y))) for x, y in zip(xs, ys)
                if math.isfinite(y) and (y > 0 or not logy)]
        pts[name] = keep
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="22" text-anchor="middle" '
           f'font-size="14">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" '
                   f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        label = f"1e{t:.1f}" if logy else f"{t:.3g}"
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" '
                   f'text-anchor="end">{label}</text>')
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{py(t):.1f}" '
                   f'y2="{py(t):.1f}" stroke="#ddd"/>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">'
               f'{escape(ylabel)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = _COLORS[i % len(_COLORS)]
        if p:
            path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in p)
            out.append(f'<polyline points="{path}" fill="none" '
                       f'stroke="{color}" stroke-width="2"/>')
            for x, y in p:
                out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" '
                           f'fill="{color}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" x2="{left + pw + 30}" '
                   f'y1="{ly - 4}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
