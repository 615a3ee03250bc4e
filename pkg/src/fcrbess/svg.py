"""Static SVG line charts without plotting dependencies."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def line_chart(path, x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 800, height: int = 320, max_points: int = 4000) -> None:
    """Write one chart with a polyline per entry of ``series`` (label -> y values)."""
    x = np.asarray(x, dtype=float)
    stride = max(1, x.size // max_points)
    xs = x[::stride]
    ys = {k: np.asarray(v, dtype=float)[::stride] for k, v in series.items()}
    allv = np.concatenate([v for v in ys.values()]) if ys else np.zeros(1)
    y0, y1 = float(np.nanmin(allv)), float(np.nanmax(allv))
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    x0, x1 = float(xs[0]), float(xs[-1]) if xs.size > 1 else float(xs[0]) + 1.0
    ml, mr, mt, mb = 60, 20, 30, 40
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + (1 - (v - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{width / 2}" y="{height - 6}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{mt + ph / 2}" transform="rotate(-90 14 {mt + ph / 2})" text-anchor="middle">{escape(ylabel)}</text>',
        f'<text x="{ml - 4}" y="{mt + 4}" text-anchor="end">{y1:.4g}</text>',
        f'<text x="{ml - 4}" y="{mt + ph}" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{ml}" y="{mt + ph + 14}">{x0:.4g}</text>',
        f'<text x="{ml + pw}" y="{mt + ph + 14}" text-anchor="end">{x1:.4g}</text>',
    ]
    for n, (label, y) in enumerate(ys.items()):
        c = _COLORS[n % len(_COLORS)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(xs, y) if np.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1" points="{pts}"/>')
        parts.append(f'<text x="{ml + 8}" y="{mt + 14 + 13 * n}" fill="{c}">{escape(label)}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
