"""Deterministic SVG 1.1 boxplot rendering.

No plotting framework: the renderer assembles the SVG text directly so
identical inputs produce byte-identical files.  Boxes show nearest-rank
quartiles, a median line and min/max whiskers; outliers are not drawn.
The value-to-pixel transform is exposed so figure geometry is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rankstats import nearest_rank_percentile


@dataclass(frozen=True)
class PlotLayout:
    width: int = 800
    height: int = 500
    margin_left: int = 70
    margin_right: int = 25
    margin_top: int = 45
    margin_bottom: int = 65

    @property
    def plot_width(self) -> float:
        return self.width - self.margin_left - self.margin_right

    @property
    def plot_height(self) -> float:
        return self.height - self.margin_top - self.margin_bottom


DEFAULT_LAYOUT = PlotLayout()


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def boxplot_stats(values) -> tuple:
    """(min, q25, median, q75, max) with nearest-rank quartiles."""
    vals = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if vals.size == 0:
        raise ValueError("empty group")
    if not np.isfinite(vals).all():
        raise ValueError("group values must be finite")
    return (float(vals[0]),
            nearest_rank_percentile(vals, 25),
            nearest_rank_percentile(vals, 50),
            nearest_rank_percentile(vals, 75),
            float(vals[-1]))


def y_limits(groups) -> tuple:
    """Padded data range over all groups; degenerate ranges pad by 1."""
    lo = min(min(vals) for _, vals in groups)
    hi = max(max(vals) for _, vals in groups)
    if hi - lo < 1e-12:
        return float(lo) - 1.0, float(hi) + 1.0
    pad = 0.05 * (hi - lo)
    return float(lo) - pad, float(hi) + pad


def y_to_pixel(value: float, lo: float, hi: float, layout: PlotLayout = DEFAULT_LAYOUT) -> float:
    """Data value -> vertical pixel coordinate (SVG y grows downward)."""
    if hi <= lo:
        raise ValueError("y range must be increasing")
    return layout.margin_top + layout.plot_height * (hi - value) / (hi - lo)


def group_center(index: int, n_groups: int, layout: PlotLayout = DEFAULT_LAYOUT) -> float:
    slot = layout.plot_width / n_groups
    return layout.margin_left + slot * (index + 0.5)


def _yticks(lo: float, hi: float, target: int = 5) -> list:
    raw = (hi - lo) / max(1, target - 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    norm = raw / mag
    for mult in (1.0, 2.0, 5.0, 10.0):
        if norm <= mult:
            step = mag * mult
            break
    ticks = []
    k = math.ceil(lo / step)
    while k * step <= hi + 1e-9 * step:
        ticks.append(k * step)
        k += 1
    return ticks


def render_boxplot_svg(groups, title: str = "", xlabel: str = "", ylabel: str = "",
                       layout: PlotLayout = DEFAULT_LAYOUT, limits: tuple | None = None) -> str:
    """Build the SVG document for one box per (label, values) group."""
    if not groups:
        raise ValueError("no groups to plot")
    for label, vals in groups:
        if len(vals) == 0:
            raise ValueError(f"group {label!r} is empty")
    lo, hi = limits if limits is not None else y_limits(groups)
    if hi <= lo:
        raise ValueError("y limits must be increasing")

    left = layout.margin_left
    right = layout.width - layout.margin_right
    top = layout.margin_top
    bottom = layout.height - layout.margin_bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{layout.width}" height="{layout.height}" '
        f'viewBox="0 0 {layout.width} {layout.height}">',
        f'<rect x="0" y="0" width="{layout.width}" height="{layout.height}" fill="#ffffff"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#333333" stroke-width="1"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="#333333" stroke-width="1"/>',
    ]
    if title:
        parts.append(f'<text x="{layout.width / 2:.1f}" y="25" font-size="16" '
                     f'text-anchor="middle" font-family="sans-serif">{_escape(title)}</text>')
    if xlabel:
        parts.append(f'<text x="{(left + right) / 2:.1f}" y="{layout.height - 12}" font-size="13" '
                     f'text-anchor="middle" font-family="sans-serif">{_escape(xlabel)}</text>')
    if ylabel:
        parts.append(f'<text x="18" y="{(top + bottom) / 2:.1f}" font-size="13" text-anchor="middle" '
                     f'font-family="sans-serif" transform="rotate(-90 18 {(top + bottom) / 2:.1f})">'
                     f'{_escape(ylabel)}</text>')

    for tick in _yticks(lo, hi):
        y = y_to_pixel(tick, lo, hi, layout)
        parts.append(f'<line x1="{left - 5}" y1="{_fmt(y)}" x2="{left}" y2="{_fmt(y)}" '
                     f'stroke="#333333" stroke-width="1"/>')
        parts.append(f'<text x="{left - 9}" y="{_fmt(y + 4)}" font-size="11" text-anchor="end" '
                     f'font-family="sans-serif">{_escape(f"{tick:g}")}</text>')

    n = len(groups)
    slot = layout.plot_width / n
    box_w = slot * 0.5
    for g, (label, vals) in enumerate(groups):
        v_min, q25, med, q75, v_max = boxplot_stats(vals)
        cx = group_center(g, n, layout)
        x0, x1 = cx - box_w / 2, cx + box_w / 2
        y_min = y_to_pixel(v_min, lo, hi, layout)
        y_q25 = y_to_pixel(q25, lo, hi, layout)
        y_med = y_to_pixel(med, lo, hi, layout)
        y_q75 = y_to_pixel(q75, lo, hi, layout)
        y_max = y_to_pixel(v_max, lo, hi, layout)
        cap_w = box_w * 0.5
        parts += [
            f'<line x1="{_fmt(cx)}" y1="{_fmt(y_max)}" x2="{_fmt(cx)}" y2="{_fmt(y_q75)}" '
            f'stroke="#333333" stroke-width="1"/>',
            f'<line x1="{_fmt(cx)}" y1="{_fmt(y_q25)}" x2="{_fmt(cx)}" y2="{_fmt(y_min)}" '
            f'stroke="#333333" stroke-width="1"/>',
            f'<line x1="{_fmt(cx - cap_w / 2)}" y1="{_fmt(y_max)}" x2="{_fmt(cx + cap_w / 2)}" '
            f'y2="{_fmt(y_max)}" stroke="#333333" stroke-width="1"/>',
            f'<line x1="{_fmt(cx - cap_w / 2)}" y1="{_fmt(y_min)}" x2="{_fmt(cx + cap_w / 2)}" '
            f'y2="{_fmt(y_min)}" stroke="#333333" stroke-width="1"/>',
            f'<rect x="{_fmt(x0)}" y="{_fmt(y_q75)}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(max(y_q25 - y_q75, 0.0))}" fill="#9ecae1" stroke="#333333" '
            f'stroke-width="1"/>',
            f'<line x1="{_fmt(x0)}" y1="{_fmt(y_med)}" x2="{_fmt(x1)}" y2="{_fmt(y_med)}" '
            f'stroke="#08306b" stroke-width="2"/>',
            f'<text x="{_fmt(cx)}" y="{bottom + 18}" font-size="11" text-anchor="middle" '
            f'font-family="sans-serif">{_escape(str(label))}</text>',
        ]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_boxplot_svg(groups, path, title: str = "", xlabel: str = "", ylabel: str = "",
                     layout: PlotLayout = DEFAULT_LAYOUT, limits: tuple | None = None) -> None:
    text = render_boxplot_svg(groups, title=title, xlabel=xlabel, ylabel=ylabel,
                              layout=layout, limits=limits)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
