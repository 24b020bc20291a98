"""Minimal self-contained SVG charts: heatmap, line chart, grouped bar chart."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


class _Canvas:
    def __init__(self, width: int, height: int, title: str):
        self.width, self.height = width, height
        self.parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
                      f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
                      f'<rect width="{width}" height="{height}" fill="white"/>']
        self.text(width / 2, 18, title, size=14, anchor="middle")

    def text(self, x, y, s, size=11, anchor="start", rotate=None, cls=None):
        extra = f' transform="rotate({rotate} {x:.1f} {y:.1f})"' if rotate else ""
        klass = f' class="{cls}"' if cls else ""
        self.parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}"'
                          f'{extra}{klass}>{escape(str(s))}</text>')

    def rect(self, x, y, w, h, fill, cls=None, title=None):
        klass = f' class="{cls}"' if cls else ""
        inner = f"<title>{escape(title)}</title>" if title else ""
        self.parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
                          f'fill="{fill}"{klass}>{inner}</rect>')

    def line(self, x1, y1, x2, y2, stroke="#333"):
        self.parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" stroke="{stroke}"/>')

    def polyline(self, pts, stroke, cls=None):
        klass = f' class="{cls}"' if cls else ""
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="2"{klass}/>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _save(svg: str, path: str | Path | None) -> str:
    if path is not None:
        Path(path).write_text(svg)
    return svg


def _blue(v: float) -> str:
    # white -> dark blue
    v = float(np.clip(v, 0.0, 1.0))
    r = int(round(255 - v * (255 - 8)))
    g = int(round(255 - v * (255 - 48)))
    b = int(round(255 - v * (255 - 107)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(matrix: np.ndarray, path=None, *, title: str = "", xlabel: str = "class",
            ylabel: str = "training step bin", empty_note: str = "no recall") -> str:
    """Rows of ``matrix`` top to bottom, columns left to right.  An all-zero matrix
    gets a visible annotation instead of a blank plot."""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    cell_w, cell_h = 28, max(4, min(24, 360 // max(rows, 1)))
    left, top = 60, 36
    c = _Canvas(left + cols * cell_w + 30, top + rows * cell_h + 50, title)
    peak = m.max() if m.size else 0.0
    for i in range(rows):
        for j in range(cols):
            v = m[i, j] / peak if peak > 0 else 0.0
            c.rect(left + j * cell_w, top + i * cell_h, cell_w, cell_h, _blue(v), cls="cell",
                   title=f"bin {i}, {xlabel} {j}: {m[i, j]:g}")
    for j in range(cols):
        c.text(left + (j + 0.5) * cell_w, top + rows * cell_h + 14, j, anchor="middle")
    c.text(left + cols * cell_w / 2, top + rows * cell_h + 32, xlabel, anchor="middle")
    c.text(16, top + rows * cell_h / 2, ylabel, anchor="middle", rotate=-90)
    if peak <= 0:
        c.text(left + cols * cell_w / 2, top + rows * cell_h / 2, empty_note, size=16,
               anchor="middle", cls="annotation")
    return _save(c.render(), path)


def line_chart(x: Sequence[float], series: dict[str, Sequence[float]], path=None, *, title: str = "",
               xlabel: str = "step", ylabel: str = "accuracy (%)", ylim=(0.0, 100.0)) -> str:
    width, height = 560, 340
    left, right, top, bottom = 56, 120, 36, 44
    c = _Canvas(width, height, title)
    pw, ph = width - left - right, height - top - bottom
    xs = np.asarray(x, dtype=float)
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    y0, y1 = ylim
    c.line(left, top + ph, left + pw, top + ph)
    c.line(left, top, left, top + ph)
    for v in np.linspace(y0, y1, 5):
        yy = top + ph * (1 - (v - y0) / (y1 - y0))
        c.text(left - 6, yy + 4, f"{v:g}", anchor="end")
    c.text(left, top + ph + 16, f"{x0:g}", anchor="middle")
    c.text(left + pw, top + ph + 16, f"{x1:g}", anchor="middle")
    c.text(left + pw / 2, height - 8, xlabel, anchor="middle")
    c.text(14, top + ph / 2, ylabel, anchor="middle", rotate=-90)
    for k, (name, ys) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        pts = [(left + pw * (xi - x0) / (x1 - x0), top + ph * (1 - (yi - y0) / (y1 - y0)))
               for xi, yi in zip(xs, ys) if np.isfinite(yi)]
        if pts:
            c.polyline(pts, colour, cls="series")
        c.rect(left + pw + 12, top + 14 * k, 10, 10, colour)
        c.text(left + pw + 26, top + 14 * k + 9, name)
    return _save(c.render(), path)


def bar_chart(groups: Sequence[str], series: dict[str, Sequence[float]], path=None, *,
              errors: dict[str, Sequence[float]] | None = None, title: str = "",
              ylabel: str = "", ylim=(-1.0, 1.0)) -> str:
    width, height = 120 + 90 * len(groups), 320
    left, top, bottom = 56, 36, 44
    c = _Canvas(width, height, title)
    pw, ph = width - left - 110, height - top - bottom
    y0, y1 = ylim

    def ypix(v):
        return top + ph * (1 - (v - y0) / (y1 - y0))

    zero = ypix(min(max(0.0, y0), y1))
    c.line(left, zero, left + pw, zero)
    c.line(left, top, left, top + ph)
    for v in np.linspace(y0, y1, 5):
        c.text(left - 6, ypix(v) + 4, f"{v:g}", anchor="end")
    c.text(14, top + ph / 2, ylabel, anchor="middle", rotate=-90)
    n = max(len(series), 1)
    gw = pw / max(len(groups), 1)
    bw = gw * 0.8 / n
    for k, (name, vals) in enumerate(series.items()):
        colour = PALETTE[k % len(PALETTE)]
        for g, v in enumerate(vals):
            x = left + g * gw + gw * 0.1 + k * bw
            yv = ypix(float(np.clip(v, y0, y1)))
            c.rect(x, min(yv, zero), bw, abs(zero - yv), colour, cls="bar", title=f"{name} {groups[g]}: {v:.3f}")
            if errors and name in errors:
                e = errors[name][g]
                c.line(x + bw / 2, ypix(min(v + e, y1)), x + bw / 2, ypix(max(v - e, y0)))
        c.rect(left + pw + 12, top + 14 * k, 10, 10, colour)
        c.text(left + pw + 26, top + 14 * k + 9, name)
    for g, name in enumerate(groups):
        c.text(left + (g + 0.5) * gw, top + ph + 16, name, anchor="middle")
    return _save(c.render(), path)
