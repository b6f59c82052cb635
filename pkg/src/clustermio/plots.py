"""Minimal SVG line and box plots, written as plain text."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")
WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=130, top=40, bottom=60)


def _esc(s) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi, log_y=False):
        self.log_y = log_y
        if log_y:
            ylo, yhi = math.log10(ylo), math.log10(yhi)
        pad = 0.05 * (yhi - ylo or 1.0)
        self.xlo, self.xhi = xlo, xhi if xhi > xlo else xlo + 1
        self.ylo, self.yhi = ylo - pad, yhi + pad
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def x(self, v):
        return self.x0 + (v - self.xlo) / (self.xhi - self.xlo) * (self.x1 - self.x0)

    def y(self, v):
        if self.log_y:
            v = math.log10(v)
        return self.y0 + (v - self.ylo) / (self.yhi - self.ylo) * (self.y1 - self.y0)

    def axes(self, title, xlabel, ylabel, xticks, xticklabels=None):
        out = [
            f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="15">{_esc(title)}</text>',
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>',
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>',
            f'<text x="{(self.x0 + self.x1) / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>',
            f'<text x="16" y="{(self.y0 + self.y1) / 2:.0f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {(self.y0 + self.y1) / 2:.0f})">{_esc(ylabel)}</text>',
        ]
        labels = xticklabels or [f"{t:g}" for t in xticks]
        for t, lab in zip(xticks, labels):
            x = self.x(t)
            out.append(f'<line x1="{_fmt(x)}" y1="{self.y0}" x2="{_fmt(x)}" y2="{self.y0 + 5}" stroke="black"/>')
            out.append(f'<text x="{_fmt(x)}" y="{self.y0 + 18}" text-anchor="middle" font-size="11">{_esc(lab)}</text>')
        if self.log_y:
            yt = [10.0**e for e in range(math.floor(self.ylo), math.ceil(self.yhi) + 1)
                  if self.ylo <= e <= self.yhi]
        else:
            yt = _ticks(self.ylo, self.yhi)
        for t in yt:
            y = self.y(t)
            if not self.y1 - 1 <= y <= self.y0 + 1:
                continue
            out.append(f'<line x1="{self.x0 - 5}" y1="{_fmt(y)}" x2="{self.x0}" y2="{_fmt(y)}" stroke="black"/>')
            out.append(f'<text x="{self.x0 - 8}" y="{_fmt(y + 4)}" text-anchor="end" font-size="11">{t:g}</text>')
        return out


def _document(body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>'] + body + ["</svg>"]) + "\n"


def _legend(names) -> list:
    out = []
    for i, name in enumerate(names):
        y = MARGIN["top"] + 10 + 20 * i
        x = WIDTH - MARGIN["right"] + 15
        col = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{x}" y="{y - 9}" width="12" height="12" fill="{col}"/>')
        out.append(f'<text x="{x + 18}" y="{y + 2}" font-size="12">{_esc(name)}</text>')
    return out


def line_plot(x: Sequence[float], series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              log_y: bool = False) -> str:
    """Lines of ``series[name]`` (same length as ``x``; ``None`` marks gaps)."""
    vals = [v for ys in series.values() for v in ys if v is not None and math.isfinite(v)]
    if log_y:
        vals = [v for v in vals if v > 0]
    if not vals:
        vals = [1.0]
    frame = _Frame(min(x), max(x), min(vals), max(vals), log_y=log_y)
    body = frame.axes(title, xlabel, ylabel, list(x))
    for i, (name, ys) in enumerate(series.items()):
        col = PALETTE[i % len(PALETTE)]
        pts = [(frame.x(a), frame.y(b)) for a, b in zip(x, ys)
               if b is not None and math.isfinite(b) and (b > 0 or not log_y)]
        if len(pts) > 1:
            path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            body.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
        for a, b in pts:
            body.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="{col}"/>')
    body += _legend(series.keys())
    return _document(body)


def box_plot(groups: dict, title: str = "", ylabel: str = "", log_y: bool = False) -> str:
    """One box (quartiles, median, 1.5 IQR whiskers) per entry of ``groups``."""
    names = list(groups)
    data = [np.asarray([v for v in groups[g] if v is not None and math.isfinite(v)], dtype=float) for g in names]
    if log_y:
        data = [d[d > 0] for d in data]
    vals = np.concatenate([d for d in data if d.size] or [np.array([1.0])])
    frame = _Frame(0.5, len(names) + 0.5, float(vals.min()), float(vals.max()), log_y=log_y)
    body = frame.axes(title, "", ylabel, list(range(1, len(names) + 1)), names)
    half = 0.3 * (frame.x(1) - frame.x(0))
    for i, d in enumerate(data, start=1):
        if not d.size:
            continue
        col = PALETTE[(i - 1) % len(PALETTE)]
        q1, med, q3 = np.percentile(d, [25, 50, 75])
        iqr = q3 - q1
        lo = d[d >= q1 - 1.5 * iqr].min()
        hi = d[d <= q3 + 1.5 * iqr].max()
        xc = frame.x(i)
        body.append(f'<line x1="{_fmt(xc)}" y1="{_fmt(frame.y(lo))}" x2="{_fmt(xc)}" y2="{_fmt(frame.y(hi))}" stroke="black"/>')
        top, bottom = frame.y(q3), frame.y(q1)
        body.append(f'<rect x="{_fmt(xc - half)}" y="{_fmt(top)}" width="{_fmt(2 * half)}" '
                    f'height="{_fmt(max(bottom - top, 0.5))}" fill="{col}" fill-opacity="0.5" stroke="black"/>')
        body.append(f'<line x1="{_fmt(xc - half)}" y1="{_fmt(frame.y(med))}" x2="{_fmt(xc + half)}" '
                    f'y2="{_fmt(frame.y(med))}" stroke="black" stroke-width="2"/>')
        for v in d[(d < lo) | (d > hi)]:
            body.append(f'<circle cx="{_fmt(xc)}" cy="{_fmt(frame.y(v))}" r="2" fill="none" stroke="black"/>')
    return _document(body)


def bar_plot(categories: Sequence[str], series: dict, title: str = "", ylabel: str = "") -> str:
    """Grouped bars; ``series[name][i]`` is the height for ``categories[i]`` (``None`` skipped)."""
    vals = [v for ys in series.values() for v in ys if v is not None and math.isfinite(v)] or [1.0]
    frame = _Frame(0.5, len(categories) + 0.5, 0.0, max(vals))
    frame.ylo = 0.0
    body = frame.axes(title, "", ylabel, list(range(1, len(categories) + 1)), list(categories))
    width = 0.8 * (frame.x(1) - frame.x(0)) / max(len(series), 1)
    for s, (name, ys) in enumerate(series.items()):
        col = PALETTE[s % len(PALETTE)]
        for i, v in enumerate(ys, start=1):
            if v is None or not math.isfinite(v):
                continue
            x = frame.x(i) - 0.4 * (frame.x(1) - frame.x(0)) + s * width
            top = frame.y(v)
            body.append(f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(width)}" '
                        f'height="{_fmt(frame.y0 - top)}" fill="{col}"/>')
    body += _legend(series.keys())
    return _document(body)
