"""Static SVG plot of crude tumor proportions against dose (square-root x axis)."""
from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

from .data_model import DoseRecord

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=60, right=120, top=20, bottom=50)


def _nice_ticks(hi: float, n: int = 5) -> list[float]:
    if hi <= 0:
        return [0.0]
    raw = hi / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    return [i * step for i in range(int(hi / step + 1e-9) + 1)]


def dose_response_svg(records: Sequence[DoseRecord], title: str = "") -> str:
    """One polyline per study of tumor/at_risk vs dose; x positions are sqrt(dose)."""
    if not records:
        raise ValueError("nothing to plot")
    series: dict[str, list[tuple[float, float]]] = {}
    for r in records:
        key = r.study if not r.stratum else f"{r.study}:{r.stratum}"
        series.setdefault(key, []).append((r.dose, r.tumor / r.at_risk))
    dmax = max(r.dose for r in records)
    pmax = max(p for pts in series.values() for _, p in pts)
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    ytop = max(0.1, math.ceil(pmax * 10) / 10)

    def sx(d):
        return MARGIN["left"] + pw * math.sqrt(d / dmax) if dmax > 0 else MARGIN["left"]

    def sy(p):
        return MARGIN["top"] + ph * (1 - p / ytop)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="14" text-anchor="middle">{escape(title)}</text>')
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    out.append(f'<line class="axis" x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for d in sorted({r.dose for r in records}):
        x = sx(d)
        out.append(f'<line class="xtick" x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y0 + 17}" text-anchor="middle">{d:g}</text>')
    for p in _nice_ticks(ytop):
        y = sy(p)
        out.append(f'<line class="ytick" x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end">{p:g}</text>')
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">dose (sqrt scale)</text>')
    out.append(
        f'<text x="14" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN["top"] + ph / 2:.1f})">tumor / at risk</text>'
    )
    for i, (name, pts) in enumerate(series.items()):
        col = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{sx(d):.2f},{sy(p):.2f}" for d, p in pts)
        out.append(
            f'<polyline class="study" data-study="{escape(name)}" points="{coords}" '
            f'fill="none" stroke="{col}" stroke-width="1.5"/>'
        )
        ly = MARGIN["top"] + 14 * (i + 1)
        lx = x0 + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 22}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
