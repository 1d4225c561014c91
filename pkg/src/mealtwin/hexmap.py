"""Standalone SVG heatmaps of the hexagonal service region.

A snapshot renders two panels for one simulated minute: idle courier counts
and current supply-demand gaps.  Gaps use a diverging scale (red for
under-supply, blue for over-supply) symmetric around zero; counts use a
single-hue ramp.  Every cell carries data-grid and data-value attributes so
renderings stay machine-checkable.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

from .errors import ConfigError
from .hexgrid import ServiceRegion

HEX_SIZE = 26.0
PANEL_GAP = 60.0
MARGIN = 40.0
CAPTION_SPACE = 34.0

_WHITE = (255, 255, 255)
_BLUE = (33, 102, 172)
_RED = (178, 24, 43)
_COUNT_HUE = (27, 120, 55)


def _lerp(a: Tuple[int, int, int], b: Tuple[int, int, int], t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    rgb = tuple(round(a[i] + (b[i] - a[i]) * t) for i in range(3))
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def diverging_color(value: float, bound: float) -> str:
    """White at zero, toward red for negative values, blue for positive."""
    if value < 0:
        return _lerp(_WHITE, _RED, -value / bound)
    if value > 0:
        return _lerp(_WHITE, _BLUE, value / bound)
    return _lerp(_WHITE, _WHITE, 0.0)


def count_color(value: float, top: float) -> str:
    return _lerp(_WHITE, _COUNT_HUE, value / top if top > 0 else 0.0)


def _center(q: int, r: int) -> Tuple[float, float]:
    x = HEX_SIZE * math.sqrt(3.0) * (q + r / 2.0)
    y = HEX_SIZE * 1.5 * r
    return x, y


def _corners(cx: float, cy: float) -> str:
    pts = []
    for k in range(6):
        angle = math.radians(60.0 * k - 30.0)
        pts.append(f"{cx + HEX_SIZE * math.cos(angle):.2f},{cy + HEX_SIZE * math.sin(angle):.2f}")
    return " ".join(pts)


def _panel(
    region: ServiceRegion,
    values: Sequence[float],
    origin: Tuple[float, float],
    color_fn,
    caption: str,
) -> List[str]:
    ox, oy = origin
    parts = [
        f'<text x="{ox:.1f}" y="{oy - CAPTION_SPACE / 2:.1f}" '
        f'font-family="sans-serif" font-size="15" fill="#333">{caption}</text>'
    ]
    for gid, coord in enumerate(region.grids):
        cx, cy = _center(coord.q, coord.r)
        cx += ox
        cy += oy
        value = values[gid]
        stroke = "#222" if region.restaurant_flags[gid] else "#999"
        width = 2.0 if region.restaurant_flags[gid] else 1.0
        parts.append(
            f'<polygon points="{_corners(cx, cy)}" fill="{color_fn(value)}" '
            f'stroke="{stroke}" stroke-width="{width}" '
            f'data-grid="{gid}" data-value="{value:g}"/>'
        )
        parts.append(
            f'<text x="{cx:.2f}" y="{cy + 5:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13" fill="#111">{value:g}</text>'
        )
    return parts


def render_snapshot(
    region: ServiceRegion,
    idle_counts: Sequence[float],
    gaps: Sequence[float],
    minute: Optional[int] = None,
) -> str:
    """Two-panel SVG document for one minute of a shift."""
    n = len(region)
    if len(idle_counts) != n or len(gaps) != n:
        raise ConfigError(
            f"snapshot vectors must have {n} entries, got "
            f"{len(idle_counts)} and {len(gaps)}"
        )
    centers = [_center(c.q, c.r) for c in region.grids]
    xs = [x for x, _ in centers]
    ys = [y for _, y in centers]
    span_x = max(xs) - min(xs) + 2 * HEX_SIZE * math.sqrt(3.0) / 2 + HEX_SIZE
    span_y = max(ys) - min(ys) + 3 * HEX_SIZE
    shift = (-min(xs) + HEX_SIZE, -min(ys) + HEX_SIZE)

    left = (MARGIN + shift[0], MARGIN + CAPTION_SPACE + shift[1])
    right = (MARGIN + span_x + PANEL_GAP + shift[0], MARGIN + CAPTION_SPACE + shift[1])
    width = 2 * MARGIN + 2 * span_x + PANEL_GAP
    height = 2 * MARGIN + CAPTION_SPACE + span_y

    top = max(1.0, max(float(v) for v in idle_counts))
    bound = max(1.0, max(abs(float(v)) for v in gaps))
    title = f"minute {minute}" if minute is not None else ""

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="#fafafa"/>',
    ]
    if title:
        parts.append(
            f'<text x="{MARGIN}" y="{MARGIN - 14}" font-family="sans-serif" '
            f'font-size="16" fill="#000">{title}</text>'
        )
    parts += _panel(region, idle_counts, left, lambda v: count_color(v, top), "idle couriers")
    parts += _panel(region, gaps, right, lambda v: diverging_color(v, bound), "supply-demand gap")
    parts.append("</svg>")
    return "\n".join(parts)
