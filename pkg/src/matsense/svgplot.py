"""Dependency-free SVG line plots for trajectory CSVs.

The renderer is a pure function of the parsed data with fixed float
formatting, so identical inputs produce byte-identical SVG files.  The y
axis is log-scaled; non-positive or missing values are dropped pointwise.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

from .dynamics import read_trajectory_csv
from .exceptions import SchemaError

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]

KINDS = {
    "rel_err": ("rel_err_", "relative error"),
    "singular_values": ("sv", "singular value"),
    "distances": ("dist_Z", "distance to reference"),
}

_W, _H = 720, 480
_ML, _MR, _MT, _MB = 70, 170, 30, 55


def _collect_series(csv_paths, kind):
    prefix, _ = KINDS[kind]
    pattern = re.compile(rf"^{re.escape(prefix)}(\d+)$")
    series = []
    multi = len(csv_paths) > 1
    for path in csv_paths:
        cols = read_trajectory_csv(path)
        if "t" not in cols:
            raise SchemaError(f"column 't' missing in {path}")
        matched = sorted((int(m.group(1)), name) for name in cols
                         if (m := pattern.match(name)))
        if not matched:
            raise SchemaError(f"column '{prefix}1' missing in {path}")
        stem = Path(path).stem
        for _, name in matched:
            y = cols[name]
            label = f"{stem}:{name}" if multi else name
            points = [(float(t), float(v)) for t, v in zip(cols["t"], y)
                      if math.isfinite(v) and v > 0.0]
            if points:
                series.append((label, points))
    return series


def render_svg(series, ylabel, xlabel="step t"):
    """Render labeled (t, y) series on a log-y canvas; returns SVG text."""
    ys = [v for _, pts in series for _, v in pts]
    xs = [t for _, pts in series for t, _ in pts]
    if ys:
        d_lo = math.floor(math.log10(min(ys)))
        d_hi = math.ceil(math.log10(max(ys)))
        if d_hi == d_lo:
            d_hi += 1
    else:
        d_lo, d_hi = -3, 1
    x_max = max(xs) if xs else 1.0
    x_max = max(x_max, 1.0)

    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def px(t):
        return _ML + plot_w * t / x_max

    def py(v):
        return _MT + plot_h * (d_hi - math.log10(v)) / (d_hi - d_lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    # y grid and tick labels, one per decade (thinned to at most 12 labels)
    n_dec = d_hi - d_lo
    step = max(1, math.ceil(n_dec / 12))
    for dec in range(d_lo, d_hi + 1, step):
        y = _MT + plot_h * (d_hi - dec) / (d_hi - d_lo)
        out.append(f'<line x1="{_ML}" y1="{y:.2f}" x2="{_ML + plot_w}" '
                   f'y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" font-size="11" '
                   f'text-anchor="end" font-family="sans-serif">1e{dec}</text>')
    # x ticks at 5 even positions
    for i in range(6):
        t = x_max * i / 5.0
        x = px(t)
        out.append(f'<line x1="{x:.2f}" y1="{_MT + plot_h}" x2="{x:.2f}" '
                   f'y2="{_MT + plot_h + 5}" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{_MT + plot_h + 18}" font-size="11" '
                   f'text-anchor="middle" font-family="sans-serif">{t:g}</text>')
    # axes
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_MT + plot_h}" '
               f'stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{_ML}" y1="{_MT + plot_h}" x2="{_ML + plot_w}" '
               f'y2="{_MT + plot_h}" stroke="black" stroke-width="1"/>')
    out.append(f'<text x="{_ML + plot_w / 2:.2f}" y="{_H - 12}" font-size="13" '
               f'text-anchor="middle" font-family="sans-serif">{xlabel}</text>')
    out.append(f'<text x="18" y="{_MT + plot_h / 2:.2f}" font-size="13" '
               f'text-anchor="middle" font-family="sans-serif" '
               f'transform="rotate(-90 18 {_MT + plot_h / 2:.2f})">{ylabel}</text>')
    # series and legend
    for i, (label, points) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(t):.2f},{py(v):.2f}" for t, v in points)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        ly = _MT + 14 + 16 * i
        lx = _ML + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}" font-size="11" '
                   f'font-family="sans-serif">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csvs(csv_paths, out_path, kind):
    """Plot one diagnostic family from trajectory CSVs into an SVG file."""
    if kind not in KINDS:
        raise SchemaError(f"unknown plot kind {kind!r}; choose from {sorted(KINDS)}")
    series = _collect_series([str(p) for p in csv_paths], kind)
    svg = render_svg(series, ylabel=KINDS[kind][1])
    with open(out_path, "w", newline="") as fh:
        fh.write(svg)
    return out_path
