"""CSV and SVG serialization of explanation artifacts.

Numbers are written with ``repr`` so a reader recovers them bit for bit;
unreachable distances are written as ``inf``.  SVG output is made
deterministic by fixing matplotlib's hash salt and dropping the date.
"""

from __future__ import annotations

import csv
import math
from typing import List, Sequence

import numpy as np

from .exceptions import ParseError
from .explain import DISTANCE, HeatmapMatrix, LocalDrawing, ShapeCurve

CURVE_COLUMNS = ["feature", "input", "class", "value"]
BAND_COLUMNS = ["lower", "upper"]
HEATMAP_COLUMNS = ["feature", "distance", "input", "class", "value"]
CONTRIBUTION_COLUMNS = ["node", "class", "contribution"]
LAYOUT_COLUMNS = ["node", "x", "y", "radius", "color", "contribution"]
BIAS_FEATURE = "bias"
"""Feature label of the extra curve-CSV rows carrying the bias term of recentered curves."""


def fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _num(token: str, path, line) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", path, line) from None


def _writer(path):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _read(path, expected: Sequence[str], optional: Sequence[str] = ()):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", path, 1)
    header = rows[0]
    if header not in (list(expected), list(expected) + list(optional)):
        raise ParseError(f"unexpected header {header}; expected {list(expected)}", path, 1)
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, n)
    return header, [(n, row) for n, row in enumerate(rows[1:], start=2)]


# --------------------------------------------------------------------------
# curves


def write_curves_csv(curves: Sequence[ShapeCurve], path) -> None:
    """One row per (curve, grid point, class).

    Distance curves use feature ``distance`` and hop distance as input.
    Band columns are added when every curve carries bands.  When any curve
    is recentered, one ``bias`` row per class records the bias term.
    """
    bands = bool(curves) and all(c.lower is not None for c in curves)
    fh, w = _writer(path)
    with fh:
        w.writerow(CURVE_COLUMNS + (BAND_COLUMNS if bands else []))
        for c in curves:
            for gi, x in enumerate(c.grid):
                for cls in range(c.values.shape[1]):
                    row = [str(c.feature), fmt(x), str(cls), fmt(c.values[gi, cls])]
                    if bands:
                        row += [fmt(c.lower[gi, cls]), fmt(c.upper[gi, cls])]
                    w.writerow(row)
        bias = next((c.bias_term for c in curves if c.bias_term is not None), None)
        if bias is not None:
            for cls, b in enumerate(np.atleast_1d(bias)):
                w.writerow([BIAS_FEATURE, "", str(cls), fmt(b)] + (["", ""] if bands else []))


def read_curves_csv(path) -> List[dict]:
    """Rows of a curve CSV as dicts with parsed numbers (``input`` is None for bias rows)."""
    header, rows = _read(path, CURVE_COLUMNS, BAND_COLUMNS)
    out = []
    for n, row in rows:
        rec = dict(zip(header, row))
        feature = rec["feature"]
        rec["feature"] = int(feature) if feature.lstrip("-").isdigit() else feature
        rec["input"] = None if rec["input"] == "" else _num(rec["input"], path, n)
        rec["class"] = int(rec["class"])
        rec["value"] = _num(rec["value"], path, n)
        for k in BAND_COLUMNS:
            if k in rec:
                rec[k] = None if rec[k] == "" else _num(rec[k], path, n)
        out.append(rec)
    return out


# --------------------------------------------------------------------------
# heatmaps


def write_heatmap_csv(maps: Sequence[HeatmapMatrix], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(HEATMAP_COLUMNS)
        for m in maps:
            for li, l in enumerate(m.distances):
                dist = "inf" if math.isinf(l) else str(int(l))
                for vi, v in enumerate(m.inputs):
                    for cls in range(m.cells.shape[2]):
                        w.writerow([str(m.feature), dist, fmt(v), str(cls), fmt(m.cells[li, vi, cls])])


def read_heatmap_csv(path) -> List[dict]:
    _, rows = _read(path, HEATMAP_COLUMNS)
    out = []
    for n, row in rows:
        f, dist, v, cls, val = row
        out.append({"feature": int(f), "distance": math.inf if dist == "inf" else int(dist),
                    "input": _num(v, path, n), "class": int(cls), "value": _num(val, path, n)})
    return out


# --------------------------------------------------------------------------
# local explanations


def write_contributions_csv(contributions, path, nodes=None) -> None:
    """``contributions`` has shape (N, C); ``nodes`` selects and orders rows."""
    c = np.asarray(contributions, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    nodes = range(c.shape[0]) if nodes is None else nodes
    fh, w = _writer(path)
    with fh:
        w.writerow(CONTRIBUTION_COLUMNS)
        for i in nodes:
            for cls in range(c.shape[1]):
                w.writerow([str(int(i)), str(cls), fmt(c[i, cls])])


def read_contributions_csv(path) -> List[dict]:
    _, rows = _read(path, CONTRIBUTION_COLUMNS)
    return [{"node": int(i), "class": int(cls), "contribution": _num(v, path, n)} for n, (i, cls, v) in rows]


def write_layout_csv(drawing: LocalDrawing, path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(LAYOUT_COLUMNS)
        for i, ((x, y), r, col, c) in enumerate(zip(drawing.positions, drawing.radii, drawing.colors,
                                                      drawing.contributions)):
            w.writerow([str(i), fmt(x), fmt(y), fmt(r), col, fmt(c)])


def read_layout_csv(path) -> List[dict]:
    _, rows = _read(path, LAYOUT_COLUMNS)
    return [{"node": int(i), "x": _num(x, path, n), "y": _num(y, path, n), "radius": _num(r, path, n),
             "color": col, "contribution": _num(c, path, n)} for n, (i, x, y, r, col, c) in rows]


# --------------------------------------------------------------------------
# SVG


def _figure(width, height):
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "gnan"
    plt.rcParams["svg.fonttype"] = "path"
    return plt, plt.figure(figsize=(width, height))


def _save(plt, fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def curve_svg(curve: ShapeCurve, path, width: float = 4.0, height: float = 3.0) -> None:
    plt, fig = _figure(width, height)
    ax = fig.add_subplot(111)
    x = np.asarray(curve.grid, dtype=np.float64)
    labels = None
    if curve.feature == DISTANCE or str(curve.feature).startswith(DISTANCE):
        labels = ["∞" if math.isinf(v) else str(int(v)) for v in x]
        x = np.arange(len(x), dtype=np.float64)
    for cls in range(curve.values.shape[1]):
        if curve.lower is not None:
            ax.fill_between(x, curve.lower[:, cls], curve.upper[:, cls], alpha=0.25, linewidth=0)
        style = "o-" if len(x) <= 20 else "-"
        ax.plot(x, curve.values[:, cls], style, label=f"class {cls}", markersize=3)
    if labels is not None:
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_xlabel("distance")
    else:
        ax.set_xlabel(f"feature {curve.feature}")
    title = "recentered" if curve.recentered else "shape"
    ax.set_title(title)
    if curve.values.shape[1] > 1:
        ax.legend()
    fig.tight_layout()
    _save(plt, fig, path)


def heatmap_svg(m: HeatmapMatrix, path, class_index: int = 0, width: float = 4.0, height: float = 3.0) -> None:
    plt, fig = _figure(width, height)
    ax = fig.add_subplot(111)
    cells = m.cells[:, :, class_index]
    bound = float(np.max(np.abs(cells))) or 1.0
    im = ax.imshow(cells, aspect="auto", cmap="RdYlGn", vmin=-bound, vmax=bound, interpolation="nearest")
    ax.set_yticks(range(len(m.distances)))
    ax.set_yticklabels(["∞" if math.isinf(l) else str(int(l)) for l in m.distances])
    ax.set_ylabel("distance")
    step = max(1, len(m.inputs) // 5)
    ticks = list(range(0, len(m.inputs), step))
    ax.set_xticks(ticks)
    ax.set_xticklabels([f"{m.inputs[t]:.2g}" for t in ticks])
    ax.set_xlabel(f"feature {m.feature}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(plt, fig, path)


def local_svg(drawing: LocalDrawing, path, width: float = 4.0, height: float = 4.0) -> None:
    """Graph drawing whose node areas follow ``drawing.radii``."""
    from matplotlib.patches import Circle

    plt, fig = _figure(width, height)
    ax = fig.add_subplot(111)
    pos = drawing.positions
    span = float(np.ptp(pos, axis=0).max()) if len(pos) > 1 else 1.0
    scale = 0.08 * (span or 1.0)
    for u, v in drawing.edges:
        ax.plot(pos[[u, v], 0], pos[[u, v], 1], color="#999999", linewidth=0.8, zorder=1)
    for i, ((x, y), r, col) in enumerate(zip(pos, drawing.radii, drawing.colors)):
        ax.add_patch(Circle((x, y), r * scale, facecolor=col, edgecolor="black", linewidth=0.4, zorder=2))
        ax.text(x, y, str(i), ha="center", va="center", fontsize=6, zorder=3)
    pad = scale * 1.5
    if len(pos):
        ax.set_xlim(pos[:, 0].min() - pad, pos[:, 0].max() + pad)
        ax.set_ylim(pos[:, 1].min() - pad, pos[:, 1].max() + pad)
    ax.set_aspect("equal")
    ax.axis("off")
    _save(plt, fig, path)
