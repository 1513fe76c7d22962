"""Static SVG scatter plot of an MDS embedding."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .divcore import MdsEmbedding

WIDTH, HEIGHT, MARGIN = 640, 480, 60


def scatter_svg(emb: MdsEmbedding, title: str = "") -> str:
    xs = [float(c[0]) if len(c) > 0 else 0.0 for c in emb.coords]
    ys = [float(c[1]) if len(c) > 1 else 0.0 for c in emb.coords]
    span_x = (max(xs) - min(xs)) or 1.0
    span_y = (max(ys) - min(ys)) or 1.0
    scale = min((WIDTH - 2 * MARGIN) / span_x, (HEIGHT - 2 * MARGIN) / span_y)
    cx = WIDTH / 2 - scale * (max(xs) + min(xs)) / 2
    cy = HEIGHT / 2 + scale * (max(ys) + min(ys)) / 2

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.2f}" y="24" text-anchor="middle">{escape(title)}</text>')
    for label, x, y in zip(emb.categories, xs, ys):
        px, py = cx + scale * x, cy - scale * y
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="#1f4e79"/>')
        parts.append(f'<text x="{px + 6:.2f}" y="{py - 6:.2f}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_scatter(path, emb: MdsEmbedding, title: str = "") -> None:
    Path(path).write_text(scatter_svg(emb, title), encoding="utf-8")
