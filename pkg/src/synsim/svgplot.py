"""Minimal static SVG plots (lines and scatters) with no plotting dependency."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_WIDTH, _HEIGHT = 860, 520
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 160, 40, 55
_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f"]


def _ticks(lo: float, hi: float, n: int = 6) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (1 * mag, 2 * mag, 5 * mag, 10 * mag) if s >= raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step / 2, step)


class Figure:
    """One SVG panel; add line/scatter series, then write to a file."""

    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = ""):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.series = []

    def line(self, x, y, label: str = "", color: str | None = None,
             dashed: bool = False):
        self.series.append(("line", np.asarray(x, float), np.asarray(y, float),
                            label, color, dashed))

    def scatter(self, x, y, label: str = "", color: str | None = None):
        self.series.append(("scatter", np.asarray(x, float),
                            np.asarray(y, float), label, color, False))

    def hline(self, y: float, label: str = "", color: str = "#000000"):
        self.series.append(("hline", None, float(y), label, color, True))

    def _bounds(self):
        xs, ys = [], []
        for kind, x, y, *_ in self.series:
            if kind == "hline":
                ys.append(np.array([y]))
            else:
                xs.append(x)
                ys.append(y)
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        x_all = np.concatenate(xs)
        y_all = np.concatenate([np.atleast_1d(v) for v in ys])
        x0, x1 = float(x_all.min()), float(x_all.max())
        y0, y1 = float(y_all.min()), float(y_all.max())
        if x1 <= x0:
            x1 = x0 + 1.0
        pad = 0.05 * (y1 - y0) if y1 > y0 else 1.0
        return x0, x1, y0 - pad, y1 + pad

    def write(self, path) -> None:
        x0, x1, y0, y1 = self._bounds()
        pw = _WIDTH - _MARGIN_L - _MARGIN_R
        ph = _HEIGHT - _MARGIN_T - _MARGIN_B

        def sx(x):
            return _MARGIN_L + (x - x0) / (x1 - x0) * pw

        def sy(y):
            return _MARGIN_T + ph - (y - y0) / (y1 - y0) * ph

        parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
            f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
            f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="#ffffff"/>',
            f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{pw}" height="{ph}" '
            'fill="none" stroke="#333333"/>',
        ]
        if self.title:
            parts.append(
                f'<text x="{_WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                f'font-size="16" font-family="sans-serif">{escape(self.title)}</text>')
        for tx in _ticks(x0, x1):
            parts.append(
                f'<line x1="{sx(tx):.2f}" y1="{_MARGIN_T + ph}" '
                f'x2="{sx(tx):.2f}" y2="{_MARGIN_T + ph + 5}" stroke="#333333"/>')
            parts.append(
                f'<text x="{sx(tx):.2f}" y="{_MARGIN_T + ph + 20}" '
                f'text-anchor="middle" font-size="11" '
                f'font-family="sans-serif">{tx:g}</text>')
        for ty in _ticks(y0, y1):
            parts.append(
                f'<line x1="{_MARGIN_L - 5}" y1="{sy(ty):.2f}" '
                f'x2="{_MARGIN_L}" y2="{sy(ty):.2f}" stroke="#333333"/>')
            parts.append(
                f'<text x="{_MARGIN_L - 9}" y="{sy(ty) + 4:.2f}" '
                f'text-anchor="end" font-size="11" '
                f'font-family="sans-serif">{ty:g}</text>')
        if self.xlabel:
            parts.append(
                f'<text x="{_MARGIN_L + pw / 2:.1f}" y="{_HEIGHT - 12}" '
                f'text-anchor="middle" font-size="13" '
                f'font-family="sans-serif">{escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = 20, _MARGIN_T + ph / 2
            parts.append(
                f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" font-size="13" '
                f'font-family="sans-serif" transform="rotate(-90 {cx} {cy:.1f})">'
                f'{escape(self.ylabel)}</text>')

        legend_y = _MARGIN_T + 10
        for idx, (kind, x, y, label, color, dashed) in enumerate(self.series):
            col = color or _COLORS[idx % len(_COLORS)]
            dash = ' stroke-dasharray="6,4"' if dashed else ""
            if kind == "hline":
                yy = sy(y)
                parts.append(
                    f'<line x1="{_MARGIN_L}" y1="{yy:.2f}" '
                    f'x2="{_MARGIN_L + pw}" y2="{yy:.2f}" stroke="{col}"'
                    f'{dash} stroke-width="1.2"/>')
            elif kind == "line":
                step = max(1, x.size // 2000)  # cap points for file size
                pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}"
                               for a, b in zip(x[::step], y[::step]))
                parts.append(
                    f'<polyline points="{pts}" fill="none" stroke="{col}"'
                    f'{dash} stroke-width="1.5"/>')
            else:
                for a, b in zip(x, y):
                    parts.append(
                        f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2.2" '
                        f'fill="{col}" fill-opacity="0.7"/>')
            if label:
                lx = _MARGIN_L + pw + 12
                parts.append(
                    f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 22}" '
                    f'y2="{legend_y}" stroke="{col}"{dash} stroke-width="2"/>')
                parts.append(
                    f'<text x="{lx + 28}" y="{legend_y + 4}" font-size="12" '
                    f'font-family="sans-serif">{escape(label)}</text>')
                legend_y += 18
        parts.append("</svg>")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(parts) + "\n")
