"""Dependency-free SVG line and bar charts with the plotted data embedded as a JSON comment."""

from __future__ import annotations

import json
import math
from html import escape

WIDTH, HEIGHT = 640, 400
MARGIN = 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _finite(values):
    return [v for v in values if v is not None and math.isfinite(v)]


def _scale(lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def _frame(title, xlabel, ylabel, y_lo, y_hi, data):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        "<!-- data: " + json.dumps(data, sort_keys=True).replace("--", "- -") + " -->",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - 20}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{MARGIN}" y2="40" stroke="black"/>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10">{y_lo:.3g}</text>',
        f'<text x="{MARGIN - 6}" y="44" text-anchor="end" font-size="10">{y_hi:.3g}</text>',
    ]
    return parts


def line_plot_svg(series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """``series`` maps a label to ``(xs, ys)``."""
    xs = _finite([x for xs_, _ in series.values() for x in xs_])
    ys = _finite([y for _, ys_ in series.values() for y in ys_])
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    sx = _scale(x_lo, x_hi, MARGIN, WIDTH - 20)
    sy = _scale(y_lo, y_hi, HEIGHT - MARGIN, 40)
    data = {label: {"x": list(map(float, x)), "y": list(map(float, y))} for label, (x, y) in series.items()}
    parts = _frame(title, xlabel, ylabel, y_lo, y_hi, data)
    for i, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if math.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(
            f'<text x="{WIDTH - 24}" y="{56 + 14 * i}" text-anchor="end" font-size="11" fill="{color}">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def bar_plot_svg(values: dict, title: str = "", ylabel: str = "") -> str:
    """One bar per label."""
    ys = _finite(values.values())
    y_hi = max(ys + [0.0]) or 1.0
    sy = _scale(0.0, y_hi, HEIGHT - MARGIN, 40)
    data = {str(k): float(v) for k, v in values.items()}
    parts = _frame(title, "", ylabel, 0.0, y_hi, data)
    n = max(len(values), 1)
    slot = (WIDTH - 20 - MARGIN) / n
    for i, (label, v) in enumerate(values.items()):
        x = MARGIN + i * slot + 0.15 * slot
        top = sy(v if math.isfinite(v) else 0.0)
        parts.append(
            f'<rect x="{x:.2f}" y="{top:.2f}" width="{0.7 * slot:.2f}" height="{HEIGHT - MARGIN - top:.2f}" '
            f'fill="{PALETTE[i % len(PALETTE)]}"/>'
        )
        parts.append(
            f'<text x="{x + 0.35 * slot:.2f}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" font-size="10">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
