"""Overlay rendering and dependency-free SVG line plots."""

import numpy as np

from .tensor_core import save_image_png

OVERLAY_ALPHA = 0.4


def jet_colormap(values):
    """Classic jet colors for values in [0, 1]; returns (..., 3) floats."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def save_overlay_png(path, pixels, heatmap):
    """Blend a jet-colored heatmap over the raw pixels at 40% alpha."""
    if heatmap.shape != pixels.shape[:2]:
        raise ValueError(f"heatmap {heatmap.shape} does not match "
                         f"image {pixels.shape[:2]}")
    colored = jet_colormap(heatmap)
    blended = (1.0 - OVERLAY_ALPHA) * pixels + OVERLAY_ALPHA * colored
    save_image_png(path, blended)


_PALETTE = ("#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b")

_PANEL_W = 420
_PANEL_H = 320
_MARGIN = 52


def svg_line_plot(path, panels, title="", comment=""):
    """Write a row of line-plot panels as a standalone SVG file.

    Each panel is a dict with keys: title, xlabel, ylabel, series
    (list of dicts with label, x, y).
    """
    width = _PANEL_W * len(panels)
    height = _PANEL_H + 24
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="sans-serif" font-size="11">']
    if comment:
        parts.append(f"<!-- {comment} -->")
    if title:
        parts.append(f'<text x="{width / 2:.0f}" y="16" text-anchor="middle" '
                     f'font-size="14">{_esc(title)}</text>')
    for i, panel in enumerate(panels):
        parts.append(_render_panel(panel, i * _PANEL_W, 24))
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _render_panel(panel, ox, oy):
    x0, y0 = ox + _MARGIN, oy + 24
    x1, y1 = ox + _PANEL_W - 16, oy + _PANEL_H - _MARGIN
    xs = np.concatenate([np.asarray(s["x"], dtype=float)
                         for s in panel["series"]])
    ys = np.concatenate([np.asarray(s["y"], dtype=float)
                         for s in panel["series"]])
    xmin, xmax = float(xs.min()), float(xs.max())
    ymin, ymax = float(ys.min()), float(ys.max())
    if xmax <= xmin:
        xmax = xmin + 1.0
    if ymax <= ymin:
        ymax = ymin + 1.0
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad

    def px(x):
        return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0)

    def py(y):
        return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0)

    out = [f'<text x="{(x0 + x1) / 2:.1f}" y="{oy + 14}" text-anchor="middle" '
           f'font-size="12">{_esc(panel.get("title", ""))}</text>',
           f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = xmin + frac * (xmax - xmin)
        yv = ymin + frac * (ymax - ymin)
        out.append(f'<line x1="{px(xv):.1f}" y1="{y1}" x2="{px(xv):.1f}" '
                   f'y2="{y1 + 4}" stroke="black"/>')
        out.append(f'<text x="{px(xv):.1f}" y="{y1 + 16}" '
                   f'text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<line x1="{x0 - 4}" y1="{py(yv):.1f}" x2="{x0}" '
                   f'y2="{py(yv):.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{py(yv) + 4:.1f}" '
                   f'text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y1 + 32}" '
               f'text-anchor="middle">{_esc(panel.get("xlabel", ""))}</text>')
    out.append(f'<text x="{ox + 14}" y="{(y0 + y1) / 2:.1f}" '
               f'text-anchor="middle" transform="rotate(-90 {ox + 14} '
               f'{(y0 + y1) / 2:.1f})">{_esc(panel.get("ylabel", ""))}</text>')
    for si, series in enumerate(panel["series"]):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}"
                       for x, y in zip(series["x"], series["y"]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        ly = y0 + 14 * si
        out.append(f'<line x1="{x1 - 90}" y1="{ly}" x2="{x1 - 74}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{x1 - 70}" y="{ly + 4}">'
                   f'{_esc(series.get("label", f"series {si}"))}</text>')
    return "\n".join(out)
