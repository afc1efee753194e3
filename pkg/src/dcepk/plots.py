"""Hand-written SVG: AIF overlays and parameter-map panels."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _svg(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n' + "\n".join(body) + "\n</svg>\n"
    )


def curve_overlay_svg(t, curves: dict, title: str = "AIF", width: int = 480, height: int = 300) -> str:
    """One polyline per named curve on shared axes, with a legend."""
    t = np.asarray(t, dtype=np.float64)
    margin = 40
    ymax = max(float(np.max(c)) for c in curves.values()) or 1.0
    ymin = min(0.0, min(float(np.min(c)) for c in curves.values()))
    tspan = float(t[-1] - t[0]) or 1.0

    def xy(tt, v):
        x = margin + (tt - t[0]) / tspan * (width - 2 * margin)
        y = height - margin - (v - ymin) / (ymax - ymin) * (height - 2 * margin)
        return f"{x:.2f},{y:.2f}"

    body = [
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="11">time (s)</text>',
        f'<text x="8" y="{margin - 8}" font-size="11">{ymax:.3g} mM</text>',
    ]
    for k, (name, c) in enumerate(curves.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(xy(tt, v) for tt, v in zip(t, np.asarray(c, dtype=np.float64)))
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{width - margin - 100}" y="{margin + 14 * k}" font-size="11" fill="{color}">'
                    f"{escape(name)}</text>")
    return _svg(width, height, body)


def _gray(v):
    g = int(round(255 * min(max(v, 0.0), 1.0)))
    return f"#{g:02x}{g:02x}{g:02x}"


def map_panels_svg(maps: dict, cell: int = 3, title: str = "") -> str:
    """Grayscale panels (one per named 2-D map) with a min-max scale bar under each."""
    names = list(maps)
    h, w = np.asarray(maps[names[0]]).shape
    pad, bar = 20, 12
    pw, ph = w * cell, h * cell
    width = len(names) * (pw + pad) + pad
    height = ph + 3 * pad + bar + 20
    body = [f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        body.append(f'<text x="{pad}" y="14" font-size="12">{escape(title)}</text>')
    for k, name in enumerate(names):
        m = np.asarray(maps[name], dtype=np.float64)
        lo, hi = float(np.nanmin(m)), float(np.nanmax(m))
        span = hi - lo or 1.0
        x0, y0 = pad + k * (pw + pad), pad + 10
        body.append(f'<g id="panel-{escape(name)}">')
        for i in range(h):
            for j in range(w):
                body.append(f'<rect x="{x0 + j * cell}" y="{y0 + i * cell}" width="{cell}" height="{cell}" '
                            f'fill="{_gray((m[i, j] - lo) / span)}"/>')
        by = y0 + ph + 6
        for s in range(16):
            body.append(f'<rect x="{x0 + s * pw / 16:.2f}" y="{by}" width="{pw / 16 + 0.5:.2f}" height="{bar}" '
                        f'fill="{_gray(s / 15)}"/>')
        body.append(f'<text x="{x0}" y="{by + bar + 12}" font-size="10">{lo:.3g}</text>')
        body.append(f'<text x="{x0 + pw}" y="{by + bar + 12}" font-size="10" text-anchor="end">{hi:.3g}</text>')
        body.append(f'<text x="{x0}" y="{y0 - 3}" font-size="11">{escape(name)}</text>')
        body.append("</g>")
    return _svg(width, height, body)
