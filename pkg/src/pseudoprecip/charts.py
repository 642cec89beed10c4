"""Deterministic SVG line/bar charts.

Hand-rolled emitter so figures are byte-identical for identical inputs
(snapshot-testable); no fonts are embedded, text uses plain SVG text
elements.
"""

from __future__ import annotations

import math

from .errors import MalformedInput

WIDTH, HEIGHT = 640, 480
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 55}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return f"{v:.6g}"


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _log_ticks(lo, hi):
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(lo_e, hi_e + 1)]


class _Frame:
    """Maps data coordinates to the plot rectangle."""

    def __init__(self, xlo, xhi, ylo, yhi, logx, logy):
        self.logx, self.logy = logx, logy
        tx = math.log10 if logx else float
        ty = math.log10 if logy else float
        self.xlo, self.xhi = tx(xlo), tx(xhi)
        self.ylo, self.yhi = ty(ylo), ty(yhi)
        if self.xhi <= self.xlo:
            self.xhi = self.xlo + 1.0
        if self.yhi <= self.ylo:
            self.yhi = self.ylo + 1.0

    def x(self, v):
        v = math.log10(v) if self.logx else v
        span = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (v - self.xlo) / (self.xhi - self.xlo) * span

    def y(self, v):
        v = math.log10(v) if self.logy else v
        span = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (v - self.ylo) / (self.yhi - self.ylo) * span


def _header(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
    ]


def _axes(frame, xlabel, ylabel):
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    parts = [f'<g stroke="black" fill="none"><path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}"/></g>']
    xticks = (_log_ticks(10 ** frame.xlo, 10 ** frame.xhi) if frame.logx
              else _nice_ticks(frame.xlo, frame.xhi))
    yticks = (_log_ticks(10 ** frame.ylo, 10 ** frame.yhi) if frame.logy
              else _nice_ticks(frame.ylo, frame.yhi))
    for t in xticks:
        px = frame.x(t)
        if x0 - 0.5 <= px <= x1 + 0.5:
            parts.append(f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + 5}" stroke="black"/>')
            parts.append(f'<text x="{px:.1f}" y="{y0 + 18}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    for t in yticks:
        py = frame.y(t)
        if y1 - 0.5 <= py <= y0 + 0.5:
            parts.append(f'<line x1="{x0 - 5}" y1="{py:.1f}" x2="{x0}" y2="{py:.1f}" stroke="black"/>')
            parts.append(f'<text x="{x0 - 8}" y="{py + 4:.1f}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    parts.append(f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">{ylabel}</text>')
    return parts


def line_chart(path, curves, title, xlabel, ylabel, logx=False, logy=False):
    """curves: list of (label, xs, ys). Log axes drop non-positive points."""
    pts = []
    for _, xs, ys in curves:
        for x, y in zip(xs, ys):
            if (not logx or x > 0) and (not logy or y > 0):
                pts.append((float(x), float(y)))
    if not pts:
        raise MalformedInput(f"no drawable points for chart {title!r}")
    xlo, xhi = min(p[0] for p in pts), max(p[0] for p in pts)
    ylo, yhi = min(p[1] for p in pts), max(p[1] for p in pts)
    frame = _Frame(xlo, xhi, ylo, yhi, logx, logy)
    parts = _header(title) + _axes(frame, xlabel, ylabel)
    for i, (label, xs, ys) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        coords = [(frame.x(x), frame.y(y)) for x, y in zip(xs, ys)
                  if (not logx or x > 0) and (not logy or y > 0)]
        if not coords:
            continue
        d = "M" + " L".join(f"{px:.2f} {py:.2f}" for px, py in coords)
        parts.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 16 * i
        parts.append(f'<line x1="{WIDTH - 150}" y1="{ly}" x2="{WIDTH - 130}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - 125}" y="{ly + 4}" font-family="sans-serif" '
                     f'font-size="11">{label}</text>')
    parts.append("</svg>")
    _write(path, parts)


def bar_chart(path, bars, title, ylabel):
    """bars: list of (label, value)."""
    if not bars:
        raise MalformedInput(f"no bars for chart {title!r}")
    vals = [float(v) for _, v in bars]
    ylo, yhi = min(0.0, min(vals)), max(0.0, max(vals))
    frame = _Frame(0.0, float(len(bars)), ylo, yhi if yhi > ylo else ylo + 1.0, False, False)
    parts = _header(title) + _axes(frame, "", ylabel)
    slot = (WIDTH - MARGIN["left"] - MARGIN["right"]) / len(bars)
    base = frame.y(0.0)
    for i, (label, v) in enumerate(bars):
        color = PALETTE[i % len(PALETTE)]
        x = MARGIN["left"] + slot * (i + 0.15)
        top = frame.y(float(v))
        y, h = (top, base - top) if top <= base else (base, top - base)
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{slot * 0.7:.1f}" '
                     f'height="{h:.1f}" fill="{color}"/>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{HEIGHT - MARGIN["bottom"] + 32}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="11">{label}</text>')
    parts.append("</svg>")
    _write(path, parts)


def _write(path, parts):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
