"""Minimal self-contained SVG line plots."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

__all__ = ["line_plot"]

_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 130, 40, 50


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * abs(hi):
        out.append(t)
        t += step
    return out


def line_plot(
    path,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    logx: bool = False,
    logy: bool = False,
    markers: bool = False,
) -> None:
    """Write one ``<polyline>`` per ``(label, xs, ys)`` series."""
    fx = math.log10 if logx else (lambda v: v)
    fy = math.log10 if logy else (lambda v: v)
    pts = [[(fx(x), fy(y)) for x, y in zip(xs, ys) if math.isfinite(y) and (not logy or y > 0)]
           for _, xs, ys in series]
    flat = [p for s in pts for p in s] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in flat), max(p[0] for p in flat)
    y0, y1 = min(p[1] for p in flat), max(p[1] for p in flat)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def sx(v):
        return _LEFT + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _TOP + (1 - (v - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        label = f"{10 ** t:g}" if logx else f"{t:g}"
        parts.append(f'<line x1="{sx(t):.1f}" y1="{_TOP + ph}" x2="{sx(t):.1f}" y2="{_TOP + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{sx(t):.1f}" y="{_TOP + ph + 18}" text-anchor="middle">{escape(label)}</text>')
    for t in _ticks(y0, y1):
        label = f"{10 ** t:.3g}" if logy else f"{t:.4g}"
        parts.append(f'<line x1="{_LEFT - 5}" y1="{sy(t):.1f}" x2="{_LEFT}" y2="{sy(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{_LEFT - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{escape(label)}</text>')
    parts.append(f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="16" y="{_TOP + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {_TOP + ph / 2:.1f})">{escape(ylabel)}</text>')
    for j, ((label, _, _), s) in enumerate(zip(series, pts)):
        color = _COLORS[j % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                     f'<title>{escape(label)}</title></polyline>')
        if markers:
            for x, y in s:
                parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = _TOP + 14 + 18 * j
        parts.append(f'<line x1="{_W - _RIGHT + 10}" y1="{ly}" x2="{_W - _RIGHT + 30}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _RIGHT + 35}" y="{ly + 4}">{escape(label)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
