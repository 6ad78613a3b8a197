"""Learning curves as self-contained SVG."""

import warnings
from xml.sax.saxutils import escape

import numpy as np

from .metrics import read_metrics

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 55}
SEED_STYLE = 'fill="none" stroke="#4a78b5" stroke-opacity="0.3" stroke-width="1"'
MEAN_STYLE = 'fill="none" stroke="#c0392b" stroke-width="2.5"'


def _ticks(lo, hi, count=5):
    return np.linspace(lo, hi, count)


def _scale(values, lo, hi, out_lo, out_hi):
    if hi == lo:
        return np.full(len(values), (out_lo + out_hi) / 2.0)
    return out_lo + (np.asarray(values, dtype=float) - lo) * (out_hi - out_lo) / (hi - lo)


def curves_from_rows(rows, x_key="env_steps"):
    """Per-seed (x, y) series and the metric name used for y.

    Uses the win rate when every row has one, otherwise the mean return.
    """
    use_win = bool(rows) and all(r["win_rate"] is not None for r in rows)
    y_key = "win_rate" if use_win else "mean_return"
    series = {}
    for r in rows:
        xs, ys = series.setdefault(r["seed"], ([], []))
        xs.append(r[x_key])
        ys.append(r[y_key])
    return {s: (np.array(x, float), np.array(y, float)) for s, (x, y) in sorted(series.items())}, y_key


def mean_curve(series):
    """Average across seeds over the iterations every seed reached."""
    if not series:
        return np.zeros(0), np.zeros(0)
    length = min(len(x) for x, _ in series.values())
    xs = np.mean([x[:length] for x, _ in series.values()], axis=0)
    ys = np.mean([y[:length] for _, y in series.values()], axis=0)
    return xs, ys


def _path(xs, ys, style):
    if len(xs) == 1:
        dot = style.replace('fill="none" stroke', "fill")
        return f'<circle cx="{xs[0]:.2f}" cy="{ys[0]:.2f}" r="3" {dot}/>'
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline points="{points}" {style}/>'


def render_svg(series, y_key, x_label="environment steps", title="learning curve"):
    left, top = MARGIN["left"], MARGIN["top"]
    right, bottom = WIDTH - MARGIN["right"], HEIGHT - MARGIN["bottom"]
    y_label = "win rate" if y_key == "win_rate" else "mean return"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="18" y="{(top + bottom) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(top + bottom) / 2})">{escape(y_label)}</text>',
    ]
    if series:
        all_x = np.concatenate([x for x, _ in series.values()])
        all_y = np.concatenate([y for _, y in series.values()])
        x_lo, x_hi = float(all_x.min()), float(all_x.max())
        y_lo, y_hi = float(all_y.min()), float(all_y.max())
        if y_key == "win_rate":
            y_lo, y_hi = 0.0, 1.0
        for tx in _ticks(x_lo, x_hi):
            px = _scale([tx], x_lo, x_hi, left, right)[0]
            out.append(f'<line x1="{px:.2f}" y1="{bottom}" x2="{px:.2f}" y2="{bottom + 5}" stroke="black"/>')
            out.append(f'<text x="{px:.2f}" y="{bottom + 18}" text-anchor="middle">{tx:.4g}</text>')
        for ty in _ticks(y_lo, y_hi):
            py = _scale([ty], y_lo, y_hi, bottom, top)[0]
            out.append(f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{py + 4:.2f}" text-anchor="end">{ty:.3g}</text>')
        for seed, (xs, ys) in series.items():
            out.append(f'<g class="seed" data-seed="{seed}">')
            out.append(_path(_scale(xs, x_lo, x_hi, left, right), _scale(ys, y_lo, y_hi, bottom, top), SEED_STYLE))
            out.append("</g>")
        mx, my = mean_curve(series)
        out.append('<g class="mean">')
        out.append(_path(_scale(mx, x_lo, x_hi, left, right), _scale(my, y_lo, y_hi, bottom, top), MEAN_STYLE))
        out.append("</g>")
    else:
        out.append(f'<text x="{(left + right) / 2}" y="{(top + bottom) / 2}" text-anchor="middle" '
                   f'fill="gray">no data</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(metrics_path, out_path, title=None):
    """Write the learning curve of a metrics CSV to ``out_path``; returns the number of seeds drawn."""
    rows = read_metrics(metrics_path)
    if not rows:
        warnings.warn(f"{metrics_path} has no rows; writing an empty plot", stacklevel=2)
    series, y_key = curves_from_rows(rows)
    svg = render_svg(series, y_key, title=title or "learning curve")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return len(series)
