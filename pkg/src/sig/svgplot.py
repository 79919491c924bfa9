"""Tiny self-contained SVG renderers (no external assets, no deps).

Just enough plotting for the report bundle: overlaid density polylines
with axes/ticks/legend, and an annotated square heatmap. Output is plain
deterministic text so artifacts diff cleanly.
"""

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 20, 36, 48


def _esc(text: str) -> str:
    return (
        str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + step * 1e-9:
        out.append(round(t, 10))
        t += step
    return out


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e6:
        return str(int(v))
    return f"{v:.4g}"


def line_chart(series, title: str, xlabel: str, ylabel: str) -> str:
    """series: [(label, xs, ys), ...] -> standalone SVG text."""
    drawable = [(lab, list(xs), list(ys)) for lab, xs, ys in series if len(xs) >= 2]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="22" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]
    if not drawable:
        parts.append(
            f'<text x="{_W // 2}" y="{_H // 2}" text-anchor="middle" fill="#888">no data</text></svg>'
        )
        return "\n".join(parts)
    x_lo = min(min(xs) for _, xs, _ in drawable)
    x_hi = max(max(xs) for _, xs, _ in drawable)
    y_lo = 0.0
    y_hi = max(max(ys) for _, _, ys in drawable) or 1.0
    y_hi *= 1.05
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo or 1.0) * plot_w

    def py(y):
        return _MT + plot_h - (y - y_lo) / (y_hi - y_lo or 1.0) * plot_h

    parts.append(
        f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333" stroke-width="1"/>'
    )
    for t in _ticks(x_lo, x_hi):
        if not x_lo <= t <= x_hi:
            continue
        x = px(t)
        parts.append(f'<line x1="{x:.1f}" y1="{_MT + plot_h}" x2="{x:.1f}" y2="{_MT + plot_h + 5}" stroke="#333"/>')
        parts.append(
            f'<text x="{x:.1f}" y="{_MT + plot_h + 18}" text-anchor="middle" font-size="11">{_fmt(t)}</text>'
        )
    for t in _ticks(y_lo, y_hi):
        if not y_lo <= t <= y_hi:
            continue
        y = py(t)
        parts.append(f'<line x1="{_ML - 5}" y1="{y:.1f}" x2="{_ML}" y2="{y:.1f}" stroke="#333"/>')
        parts.append(
            f'<text x="{_ML - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{_fmt(t)}</text>'
        )
    parts.append(
        f'<text x="{_ML + plot_w / 2:.1f}" y="{_H - 10}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MT + plot_h / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {_MT + plot_h / 2:.1f})">{_esc(ylabel)}</text>'
    )
    for idx, (label, xs, ys) in enumerate(drawable):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = _MT + 14 + 16 * idx
        parts.append(f'<line x1="{_ML + 10}" y1="{ly - 4}" x2="{_ML + 34}" y2="{ly - 4}" stroke="{color}" stroke-width="3"/>')
        parts.append(f'<text x="{_ML + 40}" y="{ly}" font-size="12">{_esc(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _heat_color(value: float, lo: float, hi: float) -> str:
    """White -> blue ramp."""
    if hi <= lo:
        frac = 0.5
    else:
        frac = (value - lo) / (hi - lo)
    frac = max(0.0, min(1.0, frac))
    r = int(255 - 180 * frac)
    g = int(255 - 130 * frac)
    b = 255
    return f"rgb({r},{g},{b})"


def heatmap_chart(labels, means, counts, title: str) -> str:
    """Square annotated heatmap; None cells render gray 'n/a'."""
    k = len(labels)
    cell = 86
    ml, mt = 110, 70
    w = ml + k * cell + 30
    h = mt + k * cell + 40
    values = [v for row in means for v in row if v is not None]
    lo = min(values) if values else 0.0
    hi = max(values) if values else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="sans-serif">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w // 2}" y="26" text-anchor="middle" font-size="15">{_esc(title)}</text>',
    ]
    for j, lab in enumerate(labels):
        x = ml + j * cell + cell / 2
        parts.append(f'<text x="{x:.1f}" y="{mt - 10}" text-anchor="middle" font-size="12">{_esc(lab)}</text>')
    for i, lab in enumerate(labels):
        y = mt + i * cell + cell / 2
        parts.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="12">{_esc(lab)}</text>')
    for i in range(k):
        for j in range(k):
            x, y = ml + j * cell, mt + i * cell
            v = means[i][j]
            if v is None:
                parts.append(
                    f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#eee" stroke="#999"/>'
                )
                parts.append(
                    f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" text-anchor="middle" '
                    f'font-size="11" fill="#888">n/a</text>'
                )
                continue
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_heat_color(v, lo, hi)}" stroke="#999"/>'
            )
            parts.append(
                f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 - 2:.1f}" text-anchor="middle" font-size="12">{v:.4f}</text>'
            )
            parts.append(
                f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 14:.1f}" text-anchor="middle" '
                f'font-size="10" fill="#555">n={counts[i][j]}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)
