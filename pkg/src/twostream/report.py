"""Deterministic report writers: JSON, aligned text tables, and SVG figures.

Every writer here is a pure function of its inputs. JSON is emitted with
sorted keys and SVG with fixed-precision coordinates, so a rerun with the
same data produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = [
    "json_text",
    "write_json",
    "write_text",
    "format_table",
    "pr_curve_svg",
    "confusion_svg",
]


def _plain(obj):
    """Recursively convert numpy scalars and arrays to built-in types."""
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def json_text(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    write_text(path, json_text(obj))


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _cell(value, precision: int) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (float, np.floating)):
        return f"{value:.{precision}f}"
    if isinstance(value, (int, np.integer)):
        return str(value)
    return str(value)


def format_table(headers, rows, precision: int = 4) -> str:
    """Aligned-column text table; numbers right-aligned, text left-aligned."""
    headers = [str(h) for h in headers]
    grid = [[_cell(v, precision) for v in row] for row in rows]
    for row in grid:
        if len(row) != len(headers):
            raise ValueError(f"row has {len(row)} cells, expected {len(headers)}")
    numeric = [all(isinstance(r[i], (int, float, np.integer, np.floating))
                   and not isinstance(r[i], bool) for r in rows) and bool(rows)
               for i in range(len(headers))]
    widths = [max(len(headers[i]), *(len(r[i]) for r in grid))
              if grid else len(headers[i]) for i in range(len(headers))]
    def fmt(cells, aligns):
        return "  ".join(c.rjust(w) if a else c.ljust(w)
                         for c, w, a in zip(cells, widths, aligns)).rstrip()
    lines = [fmt(headers, [False] * len(headers)),
             "  ".join("-" * w for w in widths)]
    lines += [fmt(row, numeric) for row in grid]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# SVG figures

_SVG_OPEN = ('<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             'viewBox="0 0 {w} {h}" font-family="monospace" font-size="11">')


def pr_curve_svg(recall, precision, title: str = "") -> str:
    """Standalone SVG of one precision/recall curve on a unit-square plot."""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if recall.shape != precision.shape or recall.ndim != 1:
        raise ValueError("recall and precision must be 1-D and the same length")
    if recall.size and (recall.min() < -1e-9 or recall.max() > 1 + 1e-9 or
                        precision.min() < -1e-9 or precision.max() > 1 + 1e-9):
        raise ValueError("recall and precision must lie in [0, 1]")

    w, h = 400, 320
    left, top, right, bottom = 50, 32, 16, 40
    pw, ph = w - left - right, h - top - bottom

    def sx(r):
        return left + r * pw

    def sy(p):
        return top + (1.0 - p) * ph

    parts = [_SVG_OPEN.format(w=w, h=h)]
    parts.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" '
                 'fill="white" stroke="black"/>')
    for t in (0.25, 0.5, 0.75):
        parts.append(f'<line x1="{sx(t):.2f}" y1="{top}" x2="{sx(t):.2f}" '
                     f'y2="{top + ph}" stroke="#cccccc"/>')
        parts.append(f'<line x1="{left}" y1="{sy(t):.2f}" x2="{left + pw}" '
                     f'y2="{sy(t):.2f}" stroke="#cccccc"/>')
    for t in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" '
                     f'text-anchor="middle">{t:.1f}</text>')
        parts.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" '
                     f'text-anchor="end">{t:.1f}</text>')
    parts.append(f'<text x="{left + pw / 2:.2f}" y="{h - 8}" '
                 'text-anchor="middle">recall</text>')
    parts.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {top + ph / 2:.2f})">precision</text>')
    if title:
        parts.append(f'<text x="{left + pw / 2:.2f}" y="20" '
                     f'text-anchor="middle">{_escape(title)}</text>')
    if recall.size:
        pts = " ".join(f"{sx(r):.2f},{sy(p):.2f}"
                       for r, p in zip(recall, precision))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     'stroke="#1f4e79" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def confusion_svg(matrix, class_names) -> str:
    """SVG heat map of a column-normalized confusion matrix.

    Rows are predicted classes, columns ground-truth classes; cell shading
    scales with the fraction and each cell carries its value as text.
    """
    m = np.asarray(matrix, dtype=np.float64)
    names = [str(n) for n in class_names]
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != len(names):
        raise ValueError(f"matrix shape {m.shape} does not match "
                         f"{len(names)} class names")
    if m.size and (m.min() < -1e-9 or m.max() > 1 + 1e-9):
        raise ValueError("normalized confusion values must lie in [0, 1]")

    n = len(names)
    cell = 46
    label = 6 + 8 * max((len(s) for s in names), default=1)
    left, top = label, label
    w = left + n * cell + 10
    h = top + n * cell + 10
    parts = [_SVG_OPEN.format(w=w, h=h)]
    for j, name in enumerate(names):
        parts.append(f'<text x="{left + j * cell + cell / 2:.2f}" '
                     f'y="{top - 8}" text-anchor="middle">{_escape(name)}</text>')
    for i, name in enumerate(names):
        parts.append(f'<text x="{left - 6}" y="{top + i * cell + cell / 2 + 4:.2f}" '
                     f'text-anchor="end">{_escape(name)}</text>')
    for i in range(n):
        for j in range(n):
            v = float(np.clip(m[i, j], 0.0, 1.0))
            x, y = left + j * cell, top + i * cell
            parts.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" '
                         f'height="{cell}" fill="#1f4e79" '
                         f'fill-opacity="{v:.4f}" stroke="#888888"/>')
            color = "white" if v > 0.5 else "black"
            parts.append(f'<text x="{x + cell / 2:.2f}" y="{y + cell / 2 + 4:.2f}" '
                         f'text-anchor="middle" fill="{color}">{v:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))
