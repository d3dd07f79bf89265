"""Static SVG figures for benchmark output.

Each SVG carries the plotted numbers in a comment block so the figure can be
checked against the CSV without rasterising anything.
"""
from __future__ import annotations

import math
import re
from pathlib import Path
from xml.sax.saxutils import escape

from .bench import aggregate, read_rows

__all__ = ["emit_plot", "render_svg", "read_plot_data", "IMPROVEMENT_SVG", "MBAR_SVG"]

IMPROVEMENT_SVG = "cumulative_improvement.svg"
MBAR_SVG = "approximations.svg"

_W, _H = 480, 320
_ML, _MR, _MT, _MB = 64, 16, 28, 44
_DATA_BEGIN = "<!-- DATA"
_DATA_END = "END DATA -->"


def _ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def render_svg(title, xs, series, band=None, ylabel="") -> str:
    """Line plot of ``series`` (list of ``(label, ys)``) over ``xs``.

    ``band`` is an optional ``(lower, upper)`` pair drawn as a shaded area.
    Non-finite values are skipped.
    """
    pts = [y for _, ys in series for y in ys if math.isfinite(y)]
    if band is not None:
        pts += [v for arr in band for v in arr if math.isfinite(v)]
    xs = list(xs)
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_lo, y_hi = (min(pts), max(pts)) if pts else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return _MT + (1 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" font-size="13" font-family="sans-serif">{escape(title)}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(y_lo, y_hi):
        y = sy(t)
        out.append(f'<line x1="{_ML - 4}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="10" font-family="sans-serif">{t:.3g}</text>')
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{_MT + ph}" x2="{x:.2f}" y2="{_MT + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{_MT + ph + 16}" text-anchor="middle" font-size="10" font-family="sans-serif">{t:.3g}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 8}" text-anchor="middle" font-size="11" font-family="sans-serif">t</text>')
    if ylabel:
        out.append(
            f'<text x="14" y="{_MT + ph / 2:.1f}" text-anchor="middle" font-size="11" font-family="sans-serif" '
            f'transform="rotate(-90 14 {_MT + ph / 2:.1f})">{escape(ylabel)}</text>'
        )
    if band is not None:
        lo, hi = band
        keep = [k for k in range(len(xs)) if math.isfinite(lo[k]) and math.isfinite(hi[k])]
        if keep:
            poly = [f"{sx(xs[k]):.2f},{sy(hi[k]):.2f}" for k in keep]
            poly += [f"{sx(xs[k]):.2f},{sy(lo[k]):.2f}" for k in reversed(keep)]
            out.append(f'<polygon points="{" ".join(poly)}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>')
    colors = ["#08519c", "#a50f15", "#006d2c"]
    for n, (label, ys) in enumerate(series):
        pts = [f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y)]
        if pts:
            out.append(f'<polyline class="series" data-label="{escape(label)}" points="{" ".join(pts)}" '
                       f'fill="none" stroke="{colors[n % len(colors)]}" stroke-width="1.5"/>')
    out.append(_DATA_BEGIN)
    names = ["t"] + [label for label, _ in series] + (["band_lo", "band_hi"] if band is not None else [])
    out.append(",".join(names))
    for k, x in enumerate(xs):
        vals = [x] + [ys[k] for _, ys in series] + ([band[0][k], band[1][k]] if band is not None else [])
        out.append(",".join(f"{v:.17g}" for v in vals))
    out.append(_DATA_END)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_plot_data(path):
    """Columns embedded in an SVG written by :func:`render_svg`."""
    text = Path(path).read_text(encoding="utf-8")
    m = re.search(re.escape(_DATA_BEGIN) + r"\n(.*?)" + re.escape(_DATA_END), text, re.S)
    if m is None:
        raise ValueError(f"{path}: no embedded data block")
    lines = [ln for ln in m.group(1).split("\n") if ln]
    names = lines[0].split(",")
    cols = {name: [] for name in names}
    for ln in lines[1:]:
        for name, v in zip(names, ln.split(",")):
            cols[name].append(float(v))
    return cols


def emit_plot(csv_path, out_dir):
    """Write the cumulative-improvement and approximation-count figures.

    Returns the two output paths. A header-only CSV gives empty axes.
    """
    rows = read_rows(csv_path)
    T = max((d["t"] for d in rows), default=-1) + 1
    aggs = aggregate(rows, T)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = [float(a["t"]) for a in aggs]
    cum = [a["cum_improvement"] for a in aggs]
    hw = [a["half_width"] for a in aggs]
    band = ([c - h for c, h in zip(cum, hw)], [c + h for c, h in zip(cum, hw)])
    p1 = out_dir / IMPROVEMENT_SVG
    p1.write_text(render_svg("Accumulated improvement", ts, [("cum_improvement", cum)], band,
                             ylabel="sum of fbar_0 - fbar_H"), encoding="utf-8", newline="\n")
    p2 = out_dir / MBAR_SVG
    p2.write_text(render_svg("Approximated values per run", ts, [("Mbar", [a["Mbar"] for a in aggs])],
                             ylabel="Mbar"), encoding="utf-8", newline="\n")
    return p1, p2
