"""Minimal deterministic SVG renderers for experiment artifacts.

Only two figures are needed (matched scatter grid, loading heatmap), so these
are written directly instead of pulling in a plotting stack.  Output depends
only on the data: same arrays, same bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_CELL = 140
_PAD = 34


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axis_limits(v: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - 0.05 * span, hi + 0.05 * span


def svg_scatter_grid(
    path,
    estimated: np.ndarray,
    reference: np.ndarray,
    pairs,
    labels=None,
    max_points: int = 400,
) -> None:
    """One scatter panel per matched (estimated, reference) pair."""
    est = np.atleast_2d(np.asarray(estimated, dtype=float))
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    pairs = list(pairs)
    cols = min(4, max(1, len(pairs)))
    rows_n = (len(pairs) + cols - 1) // cols
    W = cols * (_CELL + _PAD) + _PAD
    H = rows_n * (_CELL + _PAD) + _PAD
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
    ]
    N = est.shape[1]
    step = max(1, N // max_points)
    idx = np.arange(0, N, step)
    for p, (i, j) in enumerate(pairs):
        r, c = divmod(p, cols)
        x0 = _PAD + c * (_CELL + _PAD)
        y0 = _PAD + r * (_CELL + _PAD)
        xs, ys = ref[j, idx], est[i, idx]
        xlo, xhi = _axis_limits(xs)
        ylo, yhi = _axis_limits(ys)
        out.append(
            f'<rect x="{x0}" y="{y0}" width="{_CELL}" height="{_CELL}" '
            f'fill="none" stroke="#444" stroke-width="1"/>'
        )
        name = labels[p] if labels else f"pair {i}:{j}"
        out.append(
            f'<text x="{x0 + 4}" y="{y0 - 6}" font-size="11" '
            f'font-family="monospace" fill="#222">{name}</text>'
        )
        pts = []
        for xv, yv in zip(xs, ys):
            px = x0 + (xv - xlo) / (xhi - xlo) * _CELL
            py = y0 + _CELL - (yv - ylo) / (yhi - ylo) * _CELL
            pts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="1.6" fill="#1f6eb4" fill-opacity="0.55"/>')
        out.extend(pts)
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def svg_heatmap(path, M: np.ndarray, row_labels=None, col_labels=None, title="") -> None:
    """Signed heatmap (blue negative, red positive) with per-cell values."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n_r, n_c = M.shape
    cell = 46
    left, top = 70, 48
    W = left + n_c * cell + 20
    H = top + n_r * cell + 20
    vmax = float(np.max(np.abs(M))) or 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text x="{left}" y="20" font-size="13" font-family="monospace" '
            f'fill="#111">{title}</text>'
        )
    for i in range(n_r):
        for j in range(n_c):
            v = M[i, j] / vmax
            mag = int(round(255 * (1 - abs(v))))
            color = (
                f"rgb(255,{mag},{mag})" if v >= 0 else f"rgb({mag},{mag},255)"
            )
            x = left + j * cell
            y = top + i * cell
            out.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{color}" stroke="#999" stroke-width="0.5"/>'
            )
            out.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" font-size="10" '
                f'font-family="monospace" text-anchor="middle" fill="#111">'
                f"{M[i, j]:+.2f}</text>"
            )
    for i in range(n_r):
        lab = row_labels[i] if row_labels else str(i)
        out.append(
            f'<text x="{left - 8}" y="{top + i * cell + cell / 2 + 4}" font-size="11" '
            f'font-family="monospace" text-anchor="end" fill="#111">{lab}</text>'
        )
    for j in range(n_c):
        lab = col_labels[j] if col_labels else str(j)
        out.append(
            f'<text x="{left + j * cell + cell / 2}" y="{top - 8}" font-size="11" '
            f'font-family="monospace" text-anchor="middle" fill="#111">{lab}</text>'
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
