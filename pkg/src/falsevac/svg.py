"""Minimal deterministic SVG plots (line, heatmap, collapse overlays)."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = (70, 30, 40, 55)  # left, right, top, bottom
FONT = 'font-family="DejaVu Sans, sans-serif" font-size="12"'
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def _f(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(round(t, 12))
        t += step
    return out


def _tick_label(v: float) -> str:
    return f"{v:.4g}"


class _Frame:
    def __init__(self, xlim, ylim, title: str, xlabel: str, ylabel: str):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0
        l, r, t, b = MARGIN
        self.px0, self.px1 = l, WIDTH - r
        self.py0, self.py1 = HEIGHT - b, t
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" {FONT}>{_esc(title)}</text>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" {FONT}>{_esc(xlabel)}</text>',
            f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 16 {HEIGHT / 2})" '
            f'{FONT}>{_esc(ylabel)}</text>',
        ]

    def X(self, x):
        return self.px0 + (x - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def Y(self, y):
        return self.py0 + (y - self.y0) / (self.y1 - self.y0) * (self.py1 - self.py0)

    def axes(self):
        p = self.parts
        p.append(f'<rect x="{self.px0}" y="{self.py1}" width="{self.px1 - self.px0}" '
                 f'height="{self.py0 - self.py1}" fill="none" stroke="black"/>')
        for t in _ticks(self.x0, self.x1):
            x = self.X(t)
            p.append(f'<line x1="{_f(x)}" y1="{self.py0}" x2="{_f(x)}" y2="{self.py0 + 5}" stroke="black"/>')
            p.append(f'<text x="{_f(x)}" y="{self.py0 + 18}" text-anchor="middle" {FONT}>{_tick_label(t)}</text>')
        for t in _ticks(self.y0, self.y1):
            y = self.Y(t)
            p.append(f'<line x1="{self.px0 - 5}" y1="{_f(y)}" x2="{self.px0}" y2="{_f(y)}" stroke="black"/>')
            p.append(f'<text x="{self.px0 - 8}" y="{_f(y + 4)}" text-anchor="end" {FONT}>{_tick_label(t)}</text>')

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{_f(self.X(x))},{_f(self.Y(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def vline(self, x, color="#555555"):
        if self.x0 <= x <= self.x1:
            X = _f(self.X(x))
            self.parts.append(f'<line x1="{X}" y1="{self.py0}" x2="{X}" y2="{self.py1}" stroke="{color}" '
                              f'stroke-dasharray="4,3"/>')

    def legend(self, labels):
        for i, lab in enumerate(labels):
            y = self.py1 + 14 + 15 * i
            c = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<line x1="{self.px1 - 110}" y1="{y - 4}" x2="{self.px1 - 90}" y2="{y - 4}" '
                              f'stroke="{c}" stroke-width="2"/>')
            self.parts.append(f'<text x="{self.px1 - 85}" y="{y}" {FONT}>{_esc(lab)}</text>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _limits(arrs):
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrs])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    return lo - pad, hi + pad


def line_plot(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    vlines: Sequence[float] = (),
) -> str:
    xlim = _limits([s[1] for s in series])
    ylim = _limits([s[2] for s in series])
    fr = _Frame(xlim, ylim, title, xlabel, ylabel)
    fr.axes()
    for v in vlines:
        fr.vline(v)
    for i, (_, xs, ys) in enumerate(series):
        fr.polyline(xs, ys, PALETTE[i % len(PALETTE)])
    fr.legend([s[0] for s in series])
    return fr.render()


def heatmap(matrix, xs, ys, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Rows of ``matrix`` follow ``ys``, columns follow ``xs``; blue (low) to red (high)."""
    m = np.asarray(matrix, dtype=float)
    fr = _Frame((float(xs[0]), float(xs[-1])), (float(ys[0]), float(ys[-1])), title, xlabel, ylabel)
    lo, hi = float(np.nanmin(m)), float(np.nanmax(m))
    span = hi - lo if hi > lo else 1.0
    nx, ny = m.shape[1], m.shape[0]
    cw = (fr.px1 - fr.px0) / nx
    ch = (fr.py0 - fr.py1) / ny
    for i in range(ny):
        for j in range(nx):
            s = (m[i, j] - lo) / span
            r, b = int(round(255 * s)), int(round(255 * (1 - s)))
            g = int(round(255 * (1 - abs(2 * s - 1)) * 0.6))
            y = fr.py0 - (i + 1) * ch
            fr.parts.append(f'<rect x="{_f(fr.px0 + j * cw)}" y="{_f(y)}" width="{_f(cw + 0.3)}" '
                            f'height="{_f(ch + 0.3)}" fill="#{r:02x}{g:02x}{b:02x}"/>')
    fr.axes()
    return fr.render()
