"""SVG snapshot rendering checks via the machine-readable data attributes."""

import re

import pytest

from mealtwin.errors import ConfigError
from mealtwin.hexgrid import default_region
from mealtwin.hexmap import count_color, diverging_color, render_snapshot


def test_diverging_color_endpoints():
    assert diverging_color(0.0, 3.0) == "#ffffff"
    assert diverging_color(3.0, 3.0) == "#2166ac"  # full blue at +bound
    assert diverging_color(-3.0, 3.0) == "#b2182b"  # full red at -bound
    assert diverging_color(-99.0, 3.0) == "#b2182b"  # clamped
    mid = diverging_color(1.5, 3.0)
    assert mid not in ("#ffffff", "#2166ac")


def test_count_color_ramp():
    assert count_color(0.0, 4.0) == "#ffffff"
    assert count_color(4.0, 4.0) == "#1b7837"
    assert count_color(5.0, 0.0) == "#ffffff"  # degenerate top


def test_render_snapshot_structure():
    region = default_region()
    idle = [float(i % 3) for i in range(25)]
    gaps = [float(i - 12) for i in range(25)]
    svg = render_snapshot(region, idle, gaps, minute=42)
    assert svg.startswith("<svg ") and svg.endswith("</svg>")
    assert ">minute 42<" in svg
    assert svg.count("<polygon") == 50  # two panels of 25 cells
    for gid in range(25):
        assert svg.count(f'data-grid="{gid}"') == 2
    values = re.findall(r'data-value="([^"]+)"', svg)
    assert [float(v) for v in values[:25]] == idle
    assert [float(v) for v in values[25:]] == gaps
    # Restaurant cells get the heavy dark border.
    assert svg.count('stroke="#222"') == 2 * len(region.restaurant_ids)
    assert svg.count('stroke-width="2.0"') == 2 * len(region.restaurant_ids)
    assert "idle couriers" in svg and "supply-demand gap" in svg


def test_render_snapshot_without_minute():
    svg = render_snapshot(default_region(), [0.0] * 25, [0.0] * 25)
    assert "minute" not in svg


def test_render_snapshot_rejects_bad_lengths():
    region = default_region()
    with pytest.raises(ConfigError):
        render_snapshot(region, [0.0] * 24, [0.0] * 25)
    with pytest.raises(ConfigError):
        render_snapshot(region, [0.0] * 25, [0.0] * 26)
