"""Minimal SVG emitters for sweep results: a heatmap and a log-log line chart."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 520, 400
MARGIN = dict(left=70, right=110, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def _color(t: float) -> str:
    # blue -> white -> red
    t = min(1.0, max(0.0, t))
    if t < 0.5:
        s = t / 0.5
        r, g, b = int(33 + s * 222), int(102 + s * 153), 255
    else:
        s = (t - 0.5) / 0.5
        r, g, b = 255, int(255 - s * 200), int(255 - s * 200)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(rows: list[float], cols: list[float], values, title: str, xlabel: str, ylabel: str,
            vmin: float, vmax: float) -> str:
    """``values[i][j]`` is drawn at row ``rows[i]`` (y axis) and column ``cols[j]`` (x axis)."""
    out = _header(title)
    x0, y0 = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    cw, ch = pw / len(cols), ph / len(rows)
    span = (vmax - vmin) or 1.0
    for i, rv in enumerate(rows):
        y = y0 + ph - (i + 1) * ch
        for j, cv in enumerate(cols):
            v = values[i][j]
            out.append(
                f'<rect x="{x0 + j * cw:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                f'fill="{_color((v - vmin) / span)}"><title>{_fmt(rv)}, {_fmt(cv)}: {_fmt(v)}</title></rect>'
            )
        out.append(f'<text x="{x0 - 6}" y="{y + ch / 2 + 4:.2f}" text-anchor="end">{_fmt(rv)}</text>')
    for j, cv in enumerate(cols):
        out.append(f'<text x="{x0 + (j + 0.5) * cw:.2f}" y="{y0 + ph + 16}" text-anchor="middle">{_fmt(cv)}</text>')
    out.append(f'<text x="{x0 + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{y0 + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {y0 + ph / 2})">'
        f"{escape(ylabel)}</text>"
    )
    # colour bar
    bx = x0 + pw + 25
    steps = 20
    for s in range(steps):
        out.append(
            f'<rect x="{bx}" y="{y0 + ph - (s + 1) * ph / steps:.2f}" width="16" height="{ph / steps + 0.5:.2f}" '
            f'fill="{_color((s + 0.5) / steps)}"/>'
        )
    out.append(f'<text x="{bx + 22}" y="{y0 + ph}">{_fmt(vmin)}</text>')
    out.append(f'<text x="{bx + 22}" y="{y0 + 10}">{_fmt(vmax)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart(x: list[float], series: dict[str, list[float]], title: str, xlabel: str, ylabel: str,
               dashed: tuple[str, ...] = ()) -> str:
    """Log-log chart; series named in ``dashed`` are drawn with a dashed stroke."""
    out = _header(title)
    x0, y0 = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    ys = [v for vals in series.values() for v in vals if v > 0]
    lx0, lx1 = math.log10(min(x)), math.log10(max(x))
    ly0, ly1 = math.log10(min(ys)), math.log10(max(ys))
    if lx1 == lx0:
        lx0, lx1 = lx0 - 0.5, lx1 + 0.5
    if ly1 == ly0:
        ly0, ly1 = ly0 - 0.5, ly1 + 0.5

    def px(v):
        return x0 + (math.log10(v) - lx0) / (lx1 - lx0) * pw

    def py(v):
        return y0 + ph - (math.log10(v) - ly0) / (ly1 - ly0) * ph

    out.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
    for xv in x:
        out.append(f'<text x="{px(xv):.2f}" y="{y0 + ph + 16}" text-anchor="middle">{_fmt(xv)}</text>')
    for e in range(math.floor(ly0), math.ceil(ly1) + 1):
        if ly0 - 1e-9 <= e <= ly1 + 1e-9:
            yy = py(10.0**e)
            out.append(f'<line x1="{x0}" x2="{x0 + pw}" y1="{yy:.2f}" y2="{yy:.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{x0 - 6}" y="{yy + 4:.2f}" text-anchor="end">1e{e}</text>')
    for idx, (name, vals) in enumerate(series.items()):
        color = PALETTE[(idx // 2) % len(PALETTE)] if dashed else PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, vals) if b > 0)
        dash = ' stroke-dasharray="6 4"' if name in dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>')
        ly = y0 + 12 + idx * 16
        out.append(f'<line x1="{x0 + pw + 8}" x2="{x0 + pw + 28}" y1="{ly}" y2="{ly}" stroke="{color}"{dash}/>')
        out.append(f'<text x="{x0 + pw + 32}" y="{ly + 4}">{escape(name)}</text>')
    out.append(f'<text x="{x0 + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{y0 + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {y0 + ph / 2})">'
        f"{escape(ylabel)}</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
