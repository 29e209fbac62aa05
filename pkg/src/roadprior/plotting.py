"""Dependency-free SVG renderings: anchors in the BEV box and template bases."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import DEFAULT_BOX, ElementClass

CLASS_COLORS = {
    ElementClass.PED_CROSSING: "#1f77b4",
    ElementClass.DIVIDER: "#ff7f0e",
    ElementClass.BOUNDARY: "#2ca02c",
}


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _path(points, closed: bool, color: str, width: float = 1.0) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    tag = "polygon" if closed else "polyline"
    return (
        f'<{tag} points="{coords}" fill="none" stroke="{color}" '
        f'stroke-width="{_fmt(width)}" stroke-opacity="0.8"/>'
    )


def anchors_svg(vectors, classes, box=DEFAULT_BOX, title: str = "", scale: float = 10.0) -> str:
    """All elements drawn in the perception box, x to the right, y up."""
    w, h = box.width * scale, box.height * scale
    top = 24
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h + top)}">',
        f'<rect x="0" y="{top}" width="{_fmt(w)}" height="{_fmt(h)}" fill="white" stroke="black"/>',
        f'<text x="4" y="16" font-family="sans-serif" font-size="12">{title}</text>',
    ]
    for vec, cls in zip(np.asarray(vectors, dtype=float), classes):
        pts = vec.reshape(-1, 2)
        px = (pts[:, 0] - box.x_min) * scale
        py = top + (box.y_max - pts[:, 1]) * scale
        parts.append(_path(zip(px, py), ElementClass(cls).closed, CLASS_COLORS[ElementClass(cls)]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def templates_svg(spaces: dict, n_components: int = 5, cell: float = 120.0) -> str:
    """One row per template space, first ``n_components`` basis vectors as shapes.

    Each basis vector is read as ``P`` 2-D points and scaled to fit its cell.
    """
    rows = list(spaces.items())
    label_w = 110
    width = label_w + n_components * cell
    height = len(rows) * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}">']
    for r, (name, space) in enumerate(rows):
        y0 = r * cell
        parts.append(
            f'<text x="4" y="{_fmt(y0 + cell / 2)}" font-family="sans-serif" font-size="12">{name}</text>'
        )
        for k in range(min(n_components, space.M)):
            pts = space.basis[:, k].reshape(-1, 2)
            span = np.max(np.abs(pts - pts.mean(axis=0))) or 1.0
            local = (pts - pts.mean(axis=0)) / span * (0.4 * cell)
            cx, cy = label_w + (k + 0.5) * cell, y0 + cell / 2
            xy = zip(cx + local[:, 0], cy - local[:, 1])
            parts.append(
                f'<rect x="{_fmt(label_w + k * cell)}" y="{_fmt(y0)}" width="{_fmt(cell)}" '
                f'height="{_fmt(cell)}" fill="white" stroke="#ccc"/>'
            )
            parts.append(_path(xy, False, "#333", 1.5))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write(svg: str, path) -> None:
    Path(path).write_text(svg)
