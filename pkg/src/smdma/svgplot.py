"""Tiny dependency-free SVG line plots for sweep CSVs."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .errors import DataError

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 140, 24, 48
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#7f7f7f"]


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if mag * mult >= raw:
            step = mag * mult
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks or [lo, hi]


def render_plot(rows: list[dict], x_col: str, y_col: str, group_col: str,
                title: str = "") -> str:
    """Render grouped polylines; 'inf' y values clip to the axis top."""
    if not rows:
        raise DataError("no data rows to plot")
    for col in (x_col, y_col, group_col):
        if col not in rows[0]:
            raise DataError(f"column {col!r} not present in the CSV")

    groups: dict[str, list[tuple[float, float, bool]]] = {}
    finite_ys: list[float] = []
    xs_all: list[float] = []
    for row in rows:
        x = float(row[x_col])
        raw_y = row[y_col]
        is_inf = raw_y.strip() == "inf" if isinstance(raw_y, str) else math.isinf(raw_y)
        y = math.inf if is_inf else float(raw_y)
        groups.setdefault(str(row[group_col]), []).append((x, y, is_inf))
        xs_all.append(x)
        if not is_inf:
            finite_ys.append(y)
    if not finite_ys:
        finite_ys = [0.0, 1.0]

    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(finite_ys), max(finite_ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="16" text-anchor="middle" '
                     f'font-size="13">{escape(title)}</text>')

    for t in _nice_ticks(x_lo, x_hi):
        if not x_lo <= t <= x_hi:
            continue
        parts.append(f'<line x1="{px(t):.1f}" y1="{MARGIN_T + plot_h}" '
                     f'x2="{px(t):.1f}" y2="{MARGIN_T + plot_h + 5}" stroke="#333"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{MARGIN_T + plot_h + 18}" '
                     f'text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        if not y_lo <= t <= y_hi:
            continue
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py(t):.1f}" '
                     f'x2="{MARGIN_L}" y2="{py(t):.1f}" stroke="#333"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py(t) + 4:.1f}" '
                     f'text-anchor="end" font-size="11">{t:g}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 10}" '
                 f'text-anchor="middle" font-size="12">{escape(x_col)}</text>')
    parts.append(f'<text x="16" y="{MARGIN_T + plot_h / 2}" text-anchor="middle" '
                 f'font-size="12" transform="rotate(-90 16 {MARGIN_T + plot_h / 2})">'
                 f'{escape(y_col)}</text>')

    for gi, (name, pts) in enumerate(sorted(groups.items())):
        color = PALETTE[gi % len(PALETTE)]
        pts = sorted(pts)
        coords = []
        for x, y, is_inf in pts:
            yy = y_hi if is_inf else min(max(y, y_lo), y_hi)
            coords.append(f"{px(x):.1f},{py(yy):.1f}")
        parts.append(f'<polyline points="{" ".join(coords)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        for x, y, is_inf in pts:
            if is_inf:
                # Clipped-at-top marker for infinite values.
                parts.append(f'<path d="M {px(x) - 4:.1f} {py(y_hi) + 4:.1f} '
                             f'L {px(x):.1f} {py(y_hi) - 4:.1f} '
                             f'L {px(x) + 4:.1f} {py(y_hi) + 4:.1f} Z" fill="{color}" '
                             f'class="inf-marker"/>')
            else:
                parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" '
                             f'fill="{color}"/>')
        ly = MARGIN_T + 14 + 18 * gi
        lx = MARGIN_L + plot_w + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{lx + 27}" y="{ly}" font-size="11">'
                     f'{escape(group_col)}={escape(name)}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
