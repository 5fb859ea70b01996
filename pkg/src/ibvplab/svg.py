"""Minimal SVG emitter: axes, polylines, markers, labels and heat maps."""
from xml.sax.saxutils import escape

import numpy as np

W, H = 480, 360
MARGIN = 56
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return 0.5 * (a + b)
    return a + (v - lo) * (b - a) / (hi - lo)


def _num(v):
    return format(float(v), ".6g")


def line_plot(series, title="", xlabel="", ylabel="", logx=False, logy=False, desc=""):
    """``series``: list of ``(label, x, y, style)`` with style ``"line"`` or ``"marker"``."""
    tx = np.log10 if logx else (lambda a: np.asarray(a, float))
    ty = np.log10 if logy else (lambda a: np.asarray(a, float))
    xs = [tx(np.asarray(s[1], float)) for s in series]
    ys = [ty(np.asarray(s[2], float)) for s in series]
    allx = np.concatenate(xs) if xs else np.zeros(1)
    ally = np.concatenate(ys) if ys else np.zeros(1)
    good = np.isfinite(allx) & np.isfinite(ally)
    x0, x1 = (allx[good].min(), allx[good].max()) if good.any() else (0.0, 1.0)
    y0, y1 = (ally[good].min(), ally[good].max()) if good.any() else (0.0, 1.0)
    pad = 0.05 * (y1 - y0 or 1.0)
    y0, y1 = y0 - pad, y1 + pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f"<desc>{escape(desc)}</desc>",
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{MARGIN}" y1="{H - MARGIN}" x2="{W - 16}" y2="{H - MARGIN}" stroke="black"/>',
           f'<line x1="{MARGIN}" y1="{H - MARGIN}" x2="{MARGIN}" y2="16" stroke="black"/>']
    for k in range(5):
        fx = x0 + k * (x1 - x0) / 4
        fy = y0 + k * (y1 - y0) / 4
        px = _scale(fx, x0, x1, MARGIN, W - 16)
        py = _scale(fy, y0, y1, H - MARGIN, 16)
        lx = f"1e{_num(fx)}" if logx else _num(fx)
        ly = f"1e{_num(fy)}" if logy else _num(fy)
        out.append(f'<text x="{px:.2f}" y="{H - MARGIN + 16}" font-size="10" text-anchor="middle">{lx}</text>')
        out.append(f'<text x="{MARGIN - 4}" y="{py + 3:.2f}" font-size="10" text-anchor="end">{ly}</text>')
    for i, ((label, _, _, style), x, y) in enumerate(zip(series, xs, ys)):
        c = COLORS[i % len(COLORS)]
        ok = np.isfinite(x) & np.isfinite(y)
        pts = [(_scale(a, x0, x1, MARGIN, W - 16), _scale(b, y0, y1, H - MARGIN, 16)) for a, b in zip(x[ok], y[ok])]
        if style == "marker":
            out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{c}"/>' for a, b in pts]
        else:
            path = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        out.append(f'<text x="{W - 20}" y="{24 + 14 * i}" font-size="11" text-anchor="end" fill="{c}">'
                   f"{escape(label)}</text>")
    out.append(f'<text x="{W / 2}" y="12" font-size="12" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{H / 2}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values, title="", xlabel="", ylabel="", desc=""):
    """Grey-scale map of a 2-D array (rows along y, columns along x)."""
    v = np.asarray(values, float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    ny, nx = v.shape
    cw = (W - MARGIN - 16) / nx
    ch = (H - MARGIN - 16) / ny
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f"<desc>{escape(desc)}</desc>",
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
    for i in range(ny):
        for j in range(nx):
            g = 0 if not np.isfinite(v[i, j]) else int(round(255 * (1 - _scale(v[i, j], lo, hi, 0.0, 1.0))))
            out.append(f'<rect x="{MARGIN + j * cw:.2f}" y="{16 + (ny - 1 - i) * ch:.2f}" width="{cw + 0.05:.2f}" '
                       f'height="{ch + 0.05:.2f}" fill="rgb({g},{g},{g})"/>')
    out.append(f'<text x="{W / 2}" y="12" font-size="12" text-anchor="middle">{escape(title)} '
               f"[{_num(lo)}, {_num(hi)}]</text>")
    out.append(f'<text x="{W / 2}" y="{H - 12}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{H / 2}" font-size="11" text-anchor="middle" '
               f'transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
