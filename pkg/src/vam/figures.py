"""Static SVG output: stacked bars, scatters and polylines.

No plotting dependency; everything is emitted as fixed-format strings
(6 significant digits) so identical inputs give identical bytes.
"""

from __future__ import annotations

from .effects import CATEGORIES

_CATEGORY_COLORS = {
    "none_or_very_small": "#c6dbef",
    "small": "#6baed6",
    "moderate": "#2171b5",
    "large": "#08306b",
}
_LINE_COLORS = ["#222222", "#d62728", "#2ca02c", "#9467bd"]
_WIDTH, _HEIGHT = 640, 420
_MARGIN = 60


def fmt(x: float) -> str:
    """Locale-independent 6-significant-digit decimal."""
    return format(float(x), ".6g")


def stacked_bar_svg(labels: list[str], shares_by_label: dict) -> str:
    """One bar per model, stacked by effect-size category (percent)."""
    parts = [_header("Share of schools by effect-size category")]
    plot_w = _WIDTH - 2 * _MARGIN
    plot_h = _HEIGHT - 2 * _MARGIN
    bar_w = plot_w / max(len(labels), 1) * 0.6
    gap = plot_w / max(len(labels), 1)
    for i, label in enumerate(labels):
        x = _MARGIN + i * gap + (gap - bar_w) / 2
        y = _MARGIN + plot_h
        for cat in CATEGORIES:
            pct = shares_by_label[label].get(cat, 0.0)
            h = plot_h * pct / 100.0
            y -= h
            parts.append(
                f'<rect x="{fmt(x)}" y="{fmt(y)}" width="{fmt(bar_w)}" '
                f'height="{fmt(h)}" fill="{_CATEGORY_COLORS[cat]}">'
                f"<title>{_esc(label)} {cat}: {fmt(pct)}%</title></rect>"
            )
        parts.append(_text(x + bar_w / 2, _HEIGHT - _MARGIN + 16, _esc(label), anchor="middle"))
    parts.append(_axis_box())
    for j, cat in enumerate(CATEGORIES):
        lx = _MARGIN + j * 150
        parts.append(
            f'<rect x="{fmt(lx)}" y="10" width="12" height="12" fill="{_CATEGORY_COLORS[cat]}"/>'
        )
        parts.append(_text(lx + 16, 20, cat, size=11))
    parts.append("</svg>")
    return "\n".join(parts)


def scatter_svg(xs, ys, flags=None, title: str = "", x_label: str = "", y_label: str = "") -> str:
    """Points with the flagged subgroup drawn on top in a contrast color."""
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    flags = [bool(f) for f in flags] if flags is not None else [False] * len(xs)
    lo = min(min(xs), min(ys))
    hi = max(max(xs), max(ys))
    span = (hi - lo) or 1.0
    lo -= 0.05 * span
    hi += 0.05 * span

    def sx(v):
        return _MARGIN + (v - lo) / (hi - lo) * (_WIDTH - 2 * _MARGIN)

    def sy(v):
        return _HEIGHT - _MARGIN - (v - lo) / (hi - lo) * (_HEIGHT - 2 * _MARGIN)

    parts = [_header(title)]
    parts.append(
        f'<line x1="{fmt(sx(lo))}" y1="{fmt(sy(lo))}" x2="{fmt(sx(hi))}" y2="{fmt(sy(hi))}" '
        'stroke="#bbbbbb" stroke-dasharray="4 3"/>'
    )
    for flagged in (False, True):
        color = "#d62728" if flagged else "#4f7faf"
        radius = 3.0 if flagged else 2.0
        for x, y, f in zip(xs, ys, flags):
            if f is flagged:
                parts.append(
                    f'<circle cx="{fmt(sx(x))}" cy="{fmt(sy(y))}" r="{radius}" '
                    f'fill="{color}" fill-opacity="0.65"/>'
                )
    parts.append(_axis_box())
    parts.append(_text(_WIDTH / 2, _HEIGHT - 12, _esc(x_label), anchor="middle"))
    parts.append(_text(14, _HEIGHT / 2, _esc(y_label), anchor="middle", rotate=True))
    parts.append("</svg>")
    return "\n".join(parts)


def line_chart_svg(x_labels: list[str], lines: dict, title: str = "", y_min: float = 0.0, y_max: float | None = None) -> str:
    """Polyline per series over categorical x positions."""
    values = [v for series in lines.values() for v in series]
    top = y_max if y_max is not None else max(values) * 1.08
    top = top or 1.0
    plot_w = _WIDTH - 2 * _MARGIN
    plot_h = _HEIGHT - 2 * _MARGIN

    def sx(i):
        return _MARGIN + (i / max(len(x_labels) - 1, 1)) * plot_w

    def sy(v):
        return _MARGIN + plot_h - (v - y_min) / (top - y_min) * plot_h

    parts = [_header(title)]
    for k, (name, series) in enumerate(lines.items()):
        color = _LINE_COLORS[k % len(_LINE_COLORS)]
        points = " ".join(f"{fmt(sx(i))},{fmt(sy(v))}" for i, v in enumerate(series))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>')
        for i, v in enumerate(series):
            parts.append(f'<circle cx="{fmt(sx(i))}" cy="{fmt(sy(v))}" r="3" fill="{color}"/>')
        parts.append(_text(_MARGIN + 10 + k * 140, 20, _esc(name), size=11, color=color))
    for i, label in enumerate(x_labels):
        parts.append(_text(sx(i), _HEIGHT - _MARGIN + 16, _esc(label), anchor="middle"))
    parts.append(_axis_box())
    parts.append("</svg>")
    return "\n".join(parts)


def _header(title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif" font-size="12">'
    )
    if title:
        head += "\n" + _text(_WIDTH / 2, 40, _esc(title), anchor="middle", size=14)
    return head


def _axis_box() -> str:
    return (
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_WIDTH - 2 * _MARGIN}" '
        f'height="{_HEIGHT - 2 * _MARGIN}" fill="none" stroke="#333333"/>'
    )


def _text(x, y, content, anchor="start", size=12, color="#111111", rotate=False) -> str:
    transform = f' transform="rotate(-90 {fmt(x)} {fmt(y)})"' if rotate else ""
    return (
        f'<text x="{fmt(x)}" y="{fmt(y)}" text-anchor="{anchor}" '
        f'font-size="{size}" fill="{color}"{transform}>{content}</text>'
    )


def _esc(text: str) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
