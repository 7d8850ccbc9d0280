"""Deterministic SVG scatter plots of 2-D generations."""
from __future__ import annotations

from pathlib import Path

import numpy as np

SIZE = 800
MAX_POINTS = 100_000
OVERLAY_KINDS = ("exemplars", "centers")


def _window(arrays: list[np.ndarray]) -> float:
    """Half-width of the square data window, centred on the origin."""
    extent = max((float(np.max(np.abs(a))) for a in arrays if a.size), default=0.0)
    return max(1.0, 1.1 * extent)


def to_view(xy: np.ndarray, half: float) -> np.ndarray:
    """Map data coordinates to viewBox pixels (y axis points up)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    scale = SIZE / (2.0 * half)
    return np.column_stack([SIZE / 2 + xy[:, 0] * scale, SIZE / 2 - xy[:, 1] * scale])


def render_scatter_svg(points, overlays: dict | None = None, title: str | None = None) -> str:
    """SVG text with ``points`` drawn as filled circles.  Overlay exemplars
    become crosses and overlay centers become rings."""
    overlays = dict(overlays or {})
    unknown = set(overlays) - set(OVERLAY_KINDS)
    if unknown:
        raise ValueError(f"unknown overlay kinds {sorted(unknown)}; expected {OVERLAY_KINDS}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) > MAX_POINTS:
        raise ValueError(f"at most {MAX_POINTS} points, got {len(pts)}")
    extra = {k: np.asarray(v, dtype=np.float64).reshape(-1, 2) for k, v in overlays.items()}
    half = _window([pts] + list(extra.values()))
    c = SIZE / 2

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SIZE} {SIZE}" '
           f'width="{SIZE}" height="{SIZE}">',
           f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
           f'<g stroke="#999" stroke-width="1">'
           f'<line x1="0" y1="{c:.0f}" x2="{SIZE}" y2="{c:.0f}"/>'
           f'<line x1="{c:.0f}" y1="0" x2="{c:.0f}" y2="{SIZE}"/></g>']
    if title:
        safe = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.append(f'<text x="10" y="20" font-family="monospace" font-size="14">{safe}</text>')
    out.append('<g fill="#1f77b4" fill-opacity="0.5">')
    for x, y in to_view(pts, half):
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2"/>')
    out.append("</g>")
    if "centers" in extra:
        out.append('<g fill="none" stroke="#2ca02c" stroke-width="2">')
        for x, y in to_view(extra["centers"], half):
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="9"/>')
        out.append("</g>")
    if "exemplars" in extra:
        out.append('<g stroke="#d62728" stroke-width="2">')
        for x, y in to_view(extra["exemplars"], half):
            out.append(f'<path d="M{x - 6:.2f},{y - 6:.2f}L{x + 6:.2f},{y + 6:.2f}'
                       f'M{x - 6:.2f},{y + 6:.2f}L{x + 6:.2f},{y - 6:.2f}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_scatter_svg(points, overlays: dict | None, path, title: str | None = None) -> None:
    Path(path).write_text(render_scatter_svg(points, overlays, title), encoding="utf-8")
