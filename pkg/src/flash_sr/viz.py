"""Dependency-free SVG writers for loss curves and range-image heatmaps.

Output is a pure function of the input data, so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import math

import numpy as np

from .rangeimg import RangeImage

_PALETTE = ["#0066cc", "#cc3300", "#009966", "#996600", "#663399"]


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def write_svg_lines(series: dict[str, list[float]], path: str,
                    title: str = "", width: int = 640, height: int = 400) -> None:
    """Line chart of one or more equally-indexed series (e.g. loss curves)."""
    if not series or all(len(v) == 0 for v in series.values()):
        raise ValueError("nothing to plot")
    pad = 46
    xs = max(len(v) for v in series.values())
    finite = [y for v in series.values() for y in v if math.isfinite(y)]
    if not finite:
        raise ValueError("no finite values to plot")
    lo, hi = min(finite), max(finite)
    if hi == lo:
        hi = lo + 1.0

    def px(i: int) -> float:
        return pad + (width - 2 * pad) * (i / max(xs - 1, 1))

    def py(y: float) -> float:
        return height - pad - (height - 2 * pad) * ((y - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
        f'height="{height - 2 * pad}" fill="none" stroke="#444"/>',
    ]
    if title:
        parts.append(f'<text x="{width // 2}" y="{pad - 18}" '
                     f'text-anchor="middle" font-size="14">{title}</text>')
    parts.append(f'<text x="{pad - 6}" y="{py(hi) + 4}" text-anchor="end" '
                 f'font-size="10">{_fmt(hi)}</text>')
    parts.append(f'<text x="{pad - 6}" y="{py(lo) + 4}" text-anchor="end" '
                 f'font-size="10">{_fmt(lo)}</text>')
    parts.append(f'<text x="{px(xs - 1)}" y="{height - pad + 14}" '
                 f'text-anchor="end" font-size="10">{xs - 1}</text>')
    for k, (name, values) in enumerate(sorted(series.items())):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{px(i):.2f},{py(y):.2f}"
                       for i, y in enumerate(values) if math.isfinite(y))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 + 14 * k}" '
                     f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def write_svg_heatmap(img: RangeImage, path: str, title: str = "",
                      cell: int = 4) -> None:
    """Grayscale cell map of a range image; invalid cells render dark red.

    Horizontal runs of equal intensity collapse into single rects to keep
    files small.
    """
    h, w = img.shape
    valid = img.mask & np.isfinite(img.values)
    if valid.any():
        lo = float(img.values[valid].min())
        hi = float(img.values[valid].max())
    else:
        lo, hi = 0.0, 1.0
    span = (hi - lo) or 1.0
    level = np.where(valid, ((img.values - lo) / span * 255.0), -1.0)
    level = np.clip(np.floor(level), -1, 255).astype(int)

    top = 22 if title else 0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" '
        f'height="{h * cell + top}" viewBox="0 0 {w * cell} {h * cell + top}">'
    ]
    if title:
        parts.append(f'<text x="4" y="15" font-size="12">{title}</text>')
    for row in range(h):
        col = 0
        while col < w:
            run = col + 1
            while run < w and level[row, run] == level[row, col]:
                run += 1
            g = level[row, col]
            fill = "#400000" if g < 0 else f"#{g:02x}{g:02x}{g:02x}"
            parts.append(f'<rect x="{col * cell}" y="{row * cell + top}" '
                         f'width="{(run - col) * cell}" height="{cell}" '
                         f'fill="{fill}"/>')
            col = run
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
