"""Minimal dependency-free SVG line chart for the discount-factor sweep."""

from __future__ import annotations

from xml.sax.saxutils import escape


def line_chart_svg(xs, ys, errs=None, title="", xlabel="", ylabel="",
                   width=480, height=320) -> str:
    left, right, top, bottom = 60, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom
    errs = list(errs) if errs is not None else [0.0] * len(ys)
    lo = min(y - e for y, e in zip(ys, errs))
    hi = max(y + e for y, e in zip(ys, errs))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x0, x1 = min(xs), max(xs)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (hi - y) / (hi - lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>',
           f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>']
    for i in range(5):
        yv = lo + (hi - lo) * i / 4
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3f}</text>')
    for x in xs:
        out.append(f'<text x="{px(x):.1f}" y="{top + ph + 14}" text-anchor="middle">{x:g}</text>')
    for x, y, e in zip(xs, ys, errs):
        if e:
            out.append(f'<line x1="{px(x):.1f}" y1="{py(y - e):.1f}" x2="{px(x):.1f}" '
                       f'y2="{py(y + e):.1f}" stroke="#99c"/>')
    pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
    out.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>')
    for x, y in zip(xs, ys):
        out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" fill="#1f5fbf"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
