# src/qpbench/charts.py
"""Static SVG 1.1 charts. Output depends only on the input rows, so equal inputs give equal bytes."""
from typing import Dict, List, Optional, Sequence
from xml.sax.saxutils import escape

WIDTH = 720
HEIGHT = 360
MARGIN_LEFT = 56
MARGIN_RIGHT = 16
MARGIN_TOP = 40
MARGIN_BOTTOM = 48

MEAN_COLOR = "#4a78c2"
MIN_COLOR = "#c0392b"
MAX_COLOR = "#27ae60"
THRESHOLD_COLOR = "#555555"


def _num(value: float) -> str:
    return f"{value:.2f}"


def _frame(title: str, y_label: str) -> List[str]:
    chart_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'  <rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'  <text x="{_num(WIDTH / 2)}" y="24" text-anchor="middle" font-size="15" fill="#333">{escape(title)}</text>',
    ]
    for tick in range(0, 11, 2):
        value = tick / 10
        y = MARGIN_TOP + chart_h * (1 - value)
        svg.append(f'  <line x1="{MARGIN_LEFT}" y1="{_num(y)}" x2="{WIDTH - MARGIN_RIGHT}" y2="{_num(y)}" '
                   f'stroke="#e0e0e0" stroke-width="1"/>')
        svg.append(f'  <text x="{MARGIN_LEFT - 6}" y="{_num(y + 4)}" text-anchor="end" font-size="10" '
                   f'fill="#666">{value:.1f}</text>')
    mid = MARGIN_TOP + chart_h / 2
    svg.append(f'  <text x="14" y="{_num(mid)}" text-anchor="middle" font-size="11" fill="#666" '
               f'transform="rotate(-90, 14, {_num(mid)})">{escape(y_label)}</text>')
    return svg


def _y(value: float) -> float:
    chart_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    return MARGIN_TOP + chart_h * (1 - max(0.0, min(1.0, value)))


def bar_chart(title: str, rows: Sequence[Dict], threshold: Optional[float] = None, label_key: str = "rect") -> str:
    """Mean bars with min/max markers per row and an optional threshold line."""
    svg = _frame(title, "fidelity")
    chart_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    slot = chart_w / max(1, len(rows))
    bar_w = slot * 0.6
    for i, row in enumerate(rows):
        x = MARGIN_LEFT + i * slot + (slot - bar_w) / 2
        top = _y(row["mean"])
        svg.append(f'  <rect x="{_num(x)}" y="{_num(top)}" width="{_num(bar_w)}" '
                   f'height="{_num(_y(0.0) - top)}" fill="{MEAN_COLOR}"/>')
        cx = x + bar_w / 2
        svg.append(f'  <circle cx="{_num(cx)}" cy="{_num(_y(row["min"]))}" r="3" fill="{MIN_COLOR}"/>')
        svg.append(f'  <circle cx="{_num(cx)}" cy="{_num(_y(row["max"]))}" r="3" fill="{MAX_COLOR}"/>')
        svg.append(f'  <text x="{_num(cx)}" y="{HEIGHT - MARGIN_BOTTOM + 16}" text-anchor="middle" font-size="10" '
                   f'fill="#333">{escape(str(row[label_key]))}</text>')
    if threshold is not None:
        y = _y(threshold)
        svg.append(f'  <line x1="{MARGIN_LEFT}" y1="{_num(y)}" x2="{WIDTH - MARGIN_RIGHT}" y2="{_num(y)}" '
                   f'stroke="{THRESHOLD_COLOR}" stroke-width="1.5" stroke-dasharray="6,4"/>')
        svg.append(f'  <text x="{WIDTH - MARGIN_RIGHT}" y="{_num(y - 4)}" text-anchor="end" font-size="10" '
                   f'fill="{THRESHOLD_COLOR}">threshold {threshold:.3f}</text>')
    svg.append('</svg>')
    return "\n".join(svg) + "\n"


def swap_distance_chart(title: str, points: Sequence[Dict]) -> str:
    """Mean/min/max polylines over swap distance."""
    svg = _frame(title, "fidelity")
    chart_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    if points:
        distances = [p["d"] for p in points]
        lo, hi = min(distances), max(distances)
        span = max(1, hi - lo)

        def x(d: int) -> float:
            return MARGIN_LEFT + chart_w * ((d - lo) / span if hi > lo else 0.5)

        for key, color in (("mean", MEAN_COLOR), ("min", MIN_COLOR), ("max", MAX_COLOR)):
            coords = " ".join(f"{_num(x(p['d']))},{_num(_y(p[key]))}" for p in points)
            svg.append(f'  <polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for d in distances:
            svg.append(f'  <text x="{_num(x(d))}" y="{HEIGHT - MARGIN_BOTTOM + 16}" text-anchor="middle" '
                       f'font-size="10" fill="#333">{d}</text>')
    svg.append(f'  <text x="{_num(MARGIN_LEFT + chart_w / 2)}" y="{HEIGHT - 10}" text-anchor="middle" '
               f'font-size="11" fill="#666">swap distance</text>')
    svg.append('</svg>')
    return "\n".join(svg) + "\n"
