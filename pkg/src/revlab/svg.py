"""Minimal standalone SVG line charts (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def render_svg_lines(curves: dict, x=None, log_y: bool = False, title: str = "", xlabel: str = "step",
                     ylabel: str = "", comment: str = "") -> str:
    """Render named series sharing one x axis; all series must have the same length."""
    if not curves:
        raise ValueError("need at least one series")
    lengths = {name: len(ys) for name, ys in curves.items()}
    n = next(iter(lengths.values()))
    if n == 0:
        raise ValueError("series are empty")
    if any(v != n for v in lengths.values()):
        raise ValueError(f"series lengths differ: {lengths}")
    xs = list(range(n)) if x is None else [float(v) for v in x]
    if len(xs) != n:
        raise ValueError("x axis length does not match the series")

    def ty(v):
        return math.log10(v) if log_y else v

    vals = [ty(float(v)) for ys in curves.values() for v in ys
            if math.isfinite(float(v)) and (not log_y or float(v) > 0)]
    if not vals:
        raise ValueError("no plottable values")
    y_lo, y_hi = min(vals), max(vals)
    if y_hi == y_lo:
        pad = max(abs(y_lo) * 0.05, 1e-3)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        return TOP + (y_hi - v) / (y_hi - y_lo) * ph

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">']
    if comment:
        out.append(f"<!-- {escape(comment)} -->")
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    out.append(f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    out.append(f'<g class="axes" stroke="black" fill="none">'
               f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/>'
               f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/></g>')
    out.append('<g class="ticks" font-size="11">')
    for v in _ticks(y_lo, y_hi):
        lab = _fmt(10**v) if log_y else _fmt(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{py(v):.3f}" x2="{LEFT}" y2="{py(v):.3f}" stroke="black"/>'
                   f'<text x="{LEFT - 6}" y="{py(v) + 4:.3f}" text-anchor="end">{lab}</text>')
    for v in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{px(v):.3f}" y1="{TOP + ph}" x2="{px(v):.3f}" y2="{TOP + ph + 4}" stroke="black"/>'
                   f'<text x="{px(v):.3f}" y="{TOP + ph + 18}" text-anchor="middle">{_fmt(v)}</text>')
    out.append("</g>")
    out.append(f'<text x="{LEFT + pw / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    ylab = f"{ylabel} (log scale)" if log_y and ylabel else ylabel
    out.append(f'<text x="16" y="{TOP + ph / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {TOP + ph / 2})">{escape(ylab)}</text>')
    for k, (name, ys) in enumerate(curves.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(xv):.3f},{py(ty(float(yv))):.3f}" for xv, yv in zip(xs, ys)
                       if math.isfinite(float(yv)) and (not log_y or float(yv) > 0))
        out.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.6" points="{pts}"/>')
        ly = TOP + 14 + 18 * k
        out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly}" x2="{LEFT + pw + 32}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/><text x="{LEFT + pw + 36}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_svg_lines(curves: dict, path, **kwargs) -> Path:
    path = Path(path)
    path.write_text(render_svg_lines(curves, **kwargs))
    return path
