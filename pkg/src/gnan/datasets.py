"""Dataset readers/writers and the synthetic additive-rule generator.

Two on-disk formats are supported:

``edge-json``
    A single JSON document ``{"graphs": [{"edges", "features", "node_labels",
    "graph_label", "masks"}, ...]}``.
``flat-csv``
    A TUDataset-style directory of headerless CSV files: ``edges.csv``
    (global 0-based node ids), ``features.csv``, ``graph_indicator.csv``
    and ``graph_labels.csv`` and/or ``node_labels.csv``.  An optional
    ``node_masks.csv`` holds one split name (``train``/``val``/``test`` or
    empty) per node.

Raw TUDataset (``<NAME>_A.txt`` ...) and Geom-GCN (Cornell, Texas, ...)
dumps can be imported with :func:`read_tudataset` and :func:`read_geom_gcn`.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigError, GraphValidationError, ParseError, SchemaError
from .graph import MASK_NAMES, UNREACHABLE, GraphInstance, all_pairs_distances

FORMATS = ("edge-json", "flat-csv")

_INT_RE = re.compile(r"^[+-]?\d+$")


def _scalar(token: str):
    token = token.strip()
    if _INT_RE.match(token):
        return int(token)
    return float(token)


def _to_jsonable(value):
    if value is None:
        return None
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


# --------------------------------------------------------------------------
# edge-json


def _graph_from_record(rec, path, idx):
    if not isinstance(rec, dict):
        raise ParseError("graph record must be an object", path, f"graphs[{idx}]")
    if "features" not in rec:
        raise ParseError("missing 'features'", path, f"graphs[{idx}]")
    feats = rec["features"]
    try:
        feats = np.asarray(feats, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"features are not a numeric matrix ({exc})", path, f"graphs[{idx}]") from exc
    if feats.ndim != 2:
        raise ParseError("features must be a list of equal-length rows", path, f"graphs[{idx}]")
    masks = rec.get("masks")
    if masks is not None:
        masks = {k: np.asarray(v, dtype=bool if v and isinstance(v[0], bool) else np.int64)
                 for k, v in masks.items() if v is not None}
    labels = rec.get("node_labels")
    try:
        return GraphInstance(
            features=feats,
            edges=rec.get("edges") or [],
            node_labels=None if labels is None else np.asarray(labels),
            graph_label=rec.get("graph_label"),
            masks=masks,
            positions=rec.get("positions"),
        )
    except GraphValidationError as exc:
        raise GraphValidationError(f"graphs[{idx}]: {exc}") from exc


def _read_edge_json(path):
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("graphs"), list):
        raise ParseError("document must be an object with a 'graphs' list", path)
    return [_graph_from_record(rec, path, i) for i, rec in enumerate(doc["graphs"])]


def _write_edge_json(graphs, path):
    recs = []
    for g in graphs:
        rec = {
            "edges": g.edges.tolist(),
            "features": g.features.tolist(),
            "node_labels": _to_jsonable(g.node_labels),
            "graph_label": _to_jsonable(g.graph_label),
            "masks": None if g.masks is None else {k: np.flatnonzero(m).tolist() for k, m in g.masks.items()},
        }
        if g.positions is not None:
            rec["positions"] = g.positions.tolist()
        recs.append(rec)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"graphs": recs}, fh)
        fh.write("\n")


# --------------------------------------------------------------------------
# flat-csv


def _read_rows(path, min_cols=1, max_cols=None):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                raise ParseError("empty line", path, lineno)
            if len(row) < min_cols or (max_cols is not None and len(row) > max_cols):
                raise ParseError(f"expected {min_cols}{'' if max_cols == min_cols else '+'} columns, got {len(row)}",
                                 path, lineno)
            rows.append((lineno, row))
    return rows


def _parse_numeric(rows, path, conv=float):
    out = []
    for lineno, row in rows:
        try:
            out.append([conv(c) for c in row])
        except ValueError as exc:
            raise ParseError(f"not a number ({exc})", path, lineno) from exc
    return out


def _read_flat_csv(path):
    root = Path(path)
    if not root.is_dir():
        raise ParseError("flat-csv dataset must be a directory", root)
    feat_path = root / "features.csv"
    rows = _read_rows(feat_path)
    widths = {len(r) for _, r in rows}
    if len(widths) > 1:
        lineno = next(ln for ln, r in rows if len(r) != len(rows[0][1]))
        raise SchemaError(f"{feat_path}:{lineno}: inconsistent feature dimension {sorted(widths)}")
    features = np.asarray(_parse_numeric(rows, feat_path), dtype=np.float64)
    n_total = len(features)

    ind_path = root / "graph_indicator.csv"
    if ind_path.exists():
        ind_rows = _read_rows(ind_path, 1, 1)
        indicator = np.asarray([r[0] for r in _parse_numeric(ind_rows, ind_path, int)], dtype=np.int64)
        if len(indicator) != n_total:
            raise SchemaError(f"{ind_path}: {len(indicator)} rows but {n_total} feature rows")
    else:
        indicator = np.zeros(n_total, dtype=np.int64)
    graph_ids, indicator = np.unique(indicator, return_inverse=True)
    n_graphs = len(graph_ids)

    edges = np.zeros((0, 2), dtype=np.int64)
    edge_path = root / "edges.csv"
    if edge_path.exists() and edge_path.stat().st_size:
        e_rows = _read_rows(edge_path, 2, 2)
        edges = np.asarray(_parse_numeric(e_rows, edge_path, int), dtype=np.int64).reshape(-1, 2)
        for (lineno, _), (u, v) in zip(e_rows, edges):
            if not (0 <= u < n_total and 0 <= v < n_total):
                raise GraphValidationError(f"{edge_path}:{lineno}: node id out of range 0..{n_total - 1}")
            if indicator[u] != indicator[v]:
                raise GraphValidationError(f"{edge_path}:{lineno}: edge joins different graphs")

    node_labels = None
    nl_path = root / "node_labels.csv"
    if nl_path.exists():
        nl_rows = _read_rows(nl_path, 1, 1)
        if len(nl_rows) != n_total:
            raise SchemaError(f"{nl_path}: {len(nl_rows)} rows but {n_total} nodes")
        try:
            node_labels = np.asarray([_scalar(r[0]) for _, r in nl_rows])
        except ValueError as exc:
            raise ParseError(str(exc), nl_path) from exc

    graph_labels = None
    gl_path = root / "graph_labels.csv"
    if gl_path.exists():
        gl_rows = _read_rows(gl_path, 1, 1)
        if len(gl_rows) != n_graphs:
            raise SchemaError(f"{gl_path}: {len(gl_rows)} rows but {n_graphs} graphs")
        try:
            graph_labels = [_scalar(r[0]) for _, r in gl_rows]
        except ValueError as exc:
            raise ParseError(str(exc), gl_path) from exc

    mask_tokens = None
    mk_path = root / "node_masks.csv"
    if mk_path.exists():
        with open(mk_path, newline="", encoding="utf-8") as fh:
            mask_tokens = [line.rstrip("\n") for line in fh]
        if len(mask_tokens) != n_total:
            raise SchemaError(f"{mk_path}: {len(mask_tokens)} rows but {n_total} nodes")
        for lineno, tok in enumerate(mask_tokens, start=1):
            if tok and tok not in MASK_NAMES:
                raise ParseError(f"unknown split {tok!r}", mk_path, lineno)
        mask_tokens = np.asarray(mask_tokens)

    order = np.argsort(indicator, kind="stable")
    local = np.empty(n_total, dtype=np.int64)
    graphs = []
    for gid in range(n_graphs):
        nodes = order[indicator[order] == gid]
        local[nodes] = np.arange(len(nodes))
        sel = indicator[edges[:, 0]] == gid if len(edges) else np.zeros(0, dtype=bool)
        masks = None
        if mask_tokens is not None:
            toks = mask_tokens[nodes]
            masks = {name: toks == name for name in MASK_NAMES if np.any(toks == name)}
        graphs.append(GraphInstance(
            features=features[nodes],
            edges=local[edges[sel]] if len(edges) else edges,
            node_labels=None if node_labels is None else node_labels[nodes],
            graph_label=None if graph_labels is None else graph_labels[gid],
            masks=masks,
        ))
    return graphs


def _write_flat_csv(graphs, path):
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    offsets = np.cumsum([0] + [g.node_count for g in graphs])

    def dump(name, rows):
        with open(root / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerows(rows)

    dump("features.csv", ([repr(float(v)) for v in row] for g in graphs for row in g.features))
    dump("edges.csv", ([int(u) + int(off), int(v) + int(off)] for g, off in zip(graphs, offsets) for u, v in g.edges))
    dump("graph_indicator.csv", ([gid] for gid, g in enumerate(graphs) for _ in range(g.node_count)))
    if any(g.node_labels is not None for g in graphs):
        if not all(g.node_labels is not None for g in graphs):
            raise SchemaError("flat-csv needs node labels on every graph or none")
        dump("node_labels.csv", ([_fmt(v)] for g in graphs for v in g.node_labels))
    if any(g.graph_label is not None for g in graphs):
        if not all(g.graph_label is not None for g in graphs):
            raise SchemaError("flat-csv needs a graph label on every graph or none")
        dump("graph_labels.csv", ([_fmt(g.graph_label)] for g in graphs))
    if any(g.masks is not None for g in graphs):
        with open(root / "node_masks.csv", "w", newline="", encoding="utf-8") as fh:
            for g in graphs:
                for i in range(g.node_count):
                    tok = ""
                    for name, m in (g.masks or {}).items():
                        if m[i]:
                            tok = name
                    fh.write(tok + "\n")


def _fmt(v):
    v = _to_jsonable(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_dataset(path, format: str = "edge-json") -> List[GraphInstance]:
    """Read a dataset in one of :data:`FORMATS`.

    Raises
    ------
    ParseError
        Malformed file; the message carries the file and line/record.
    SchemaError
        Inconsistent feature dimension across graphs.
    GraphValidationError
        Dangling edge index or overlapping masks.
    """
    if format == "edge-json":
        graphs = _read_edge_json(path)
    elif format == "flat-csv":
        graphs = _read_flat_csv(path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    if not graphs:
        raise ParseError("dataset contains no graphs", path)
    dims = {g.n_features for g in graphs}
    if len(dims) > 1:
        raise SchemaError(f"inconsistent feature dimension across graphs: {sorted(dims)}")
    return graphs


def write_dataset(graphs: Sequence[GraphInstance], path, format: str = "edge-json") -> None:
    """Inverse of :func:`parse_dataset`; floats are written with ``repr`` so they round-trip."""
    if format == "edge-json":
        _write_edge_json(graphs, path)
    elif format == "flat-csv":
        _write_flat_csv(graphs, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}; expected one of {FORMATS}")


def guess_format(path) -> str:
    return "flat-csv" if Path(path).is_dir() else "edge-json"


# --------------------------------------------------------------------------
# third-party dumps


def read_tudataset(root, name: str) -> List[GraphInstance]:
    """Import a raw TUDataset dump (``<name>_A.txt``, 1-based ids).

    Discrete node labels become one-hot features, as in the usual
    benchmark setup; ``<name>_node_attributes.txt`` is appended when present.
    """
    root = Path(root)

    def load(suffix, dtype=np.int64):
        p = root / f"{name}_{suffix}.txt"
        if not p.exists():
            return None
        return np.loadtxt(p, delimiter=",", dtype=dtype, ndmin=1 if dtype is np.int64 else 2)

    edges = np.loadtxt(root / f"{name}_A.txt", delimiter=",", dtype=np.int64, ndmin=2) - 1
    indicator = load("graph_indicator") - 1
    graph_labels = load("graph_labels")
    node_labels = load("node_labels")
    attrs = load("node_attributes", np.float64)
    blocks = []
    if node_labels is not None:
        values, codes = np.unique(node_labels, return_inverse=True)
        blocks.append(np.eye(len(values))[codes])
    if attrs is not None:
        blocks.append(attrs)
    if not blocks:
        blocks.append(np.ones((len(indicator), 1)))
    features = np.hstack(blocks)
    _, glabels = np.unique(graph_labels, return_inverse=True)

    graphs = []
    starts = np.searchsorted(indicator, np.arange(indicator.max() + 2))
    for gid in range(indicator.max() + 1):
        lo, hi = starts[gid], starts[gid + 1]
        sel = (edges[:, 0] >= lo) & (edges[:, 0] < hi)
        graphs.append(GraphInstance(features=features[lo:hi], edges=edges[sel] - lo,
                                    graph_label=int(glabels[gid])))
    return graphs


def read_geom_gcn(root, name: str = "cornell") -> Tuple[GraphInstance, List[dict]]:
    """Import a Geom-GCN node dataset and its ten predefined splits.

    Expects ``out1_node_feature_label.txt``, ``out1_graph_edges.txt`` and,
    optionally, ``{name}_split_0.6_0.2_{i}.npz`` files in ``root``.
    """
    root = Path(root)
    ids, feats, labels = [], [], []
    with open(root / "out1_node_feature_label.txt", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            nid, fvec, lab = line.rstrip("\n").split("\t")
            ids.append(int(nid))
            feats.append([float(v) for v in fvec.split(",")])
            labels.append(int(lab))
    order = np.argsort(ids)
    features = np.asarray(feats)[order]
    node_labels = np.asarray(labels)[order]
    edges = []
    with open(root / "out1_graph_edges.txt", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            u, v = line.split()
            edges.append((int(u), int(v)))
    g = GraphInstance(features=features, edges=edges, node_labels=node_labels)
    splits = []
    for i in range(10):
        p = root / f"{name}_split_0.6_0.2_{i}.npz"
        if p.exists():
            z = np.load(p)
            splits.append({"train": z["train_mask"].astype(bool), "val": z["val_mask"].astype(bool),
                           "test": z["test_mask"].astype(bool)})
    return g, splits


# --------------------------------------------------------------------------
# synthetic generator


def _f_linear(x):
    return x - 0.5


def _f_square(x):
    return 4.0 * (x - 0.5) ** 2 - 1.0 / 3.0


def _f_sin(x):
    return np.sin(2.0 * np.pi * x)


def _f_step(x):
    return np.where(x > 0.5, 1.0, -1.0)


def _f_bump(x):
    return np.exp(-(((x - 0.5) / 0.15) ** 2)) - 0.27


def _f_zero(x):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


SHAPE_FUNCTIONS = {
    "linear": _f_linear,
    "square": _f_square,
    "sin": _f_sin,
    "step": _f_step,
    "bump": _f_bump,
    "zero": _f_zero,
}
"""Univariate ground-truth feature functions available to the generator."""


def _k_exp(l):
    return np.exp(-l)


def _k_inverse(l):
    return 1.0 / (1.0 + l)


def _k_local(l):
    return (l <= 1).astype(np.float64)


def _k_constant(l):
    return np.ones_like(l, dtype=np.float64)


DISTANCE_KERNELS = {
    "exp": _k_exp,
    "inverse": _k_inverse,
    "local": _k_local,
    "constant": _k_constant,
}
"""Ground-truth distance kernels, as functions of the hop distance (unreachable pairs get 0)."""


@dataclass
class SyntheticConfig:
    """Generator settings for datasets labeled by a known additive rule.

    The node score is ``s_i = sum_j k(dist(j, i)) / #dist_i(j, i) * sum_k g_k(x_jk)``
    (the count normalization is dropped when ``normalize`` is false) and the
    graph score is ``sum_i s_i``.  Binary labels are ``score > threshold``;
    multiclass labels are the argmax of per-class scores, where class ``c``
    uses feature functions shifted by ``c`` in the ``shape_functions`` cycle.
    Regression targets are the score plus Gaussian noise.
    """

    n_graphs: int = 50
    n_nodes: Tuple[int, int] = (6, 16)
    edge_prob: float = 0.25
    n_features: int = 3
    feature_kind: str = "continuous"
    shape_functions: Tuple[str, ...] = ("sin", "linear", "square")
    distance_kernel: str = "exp"
    level: str = "graph"
    target: str = "binary"
    n_classes: int = 2
    threshold: Union[float, str] = 0.0
    normalize: bool = True
    noise: float = 0.0
    split: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def validate(self):
        lo, hi = self.n_nodes
        if not (1 <= lo <= hi):
            raise ConfigError(f"n_nodes range must satisfy 1 <= min <= max, got {self.n_nodes}")
        if not (0.0 <= self.edge_prob <= 1.0) or math.isnan(self.edge_prob):
            raise ConfigError(f"edge_prob must lie in [0, 1], got {self.edge_prob}")
        if self.n_graphs < 1 or self.n_features < 1:
            raise ConfigError("n_graphs and n_features must be positive")
        if self.feature_kind not in ("continuous", "binary"):
            raise ConfigError(f"feature_kind must be 'continuous' or 'binary', got {self.feature_kind!r}")
        if not self.shape_functions:
            raise ConfigError("shape_functions must not be empty")
        for name in self.shape_functions:
            if name not in SHAPE_FUNCTIONS:
                raise ConfigError(f"unknown shape function {name!r}; choose from {sorted(SHAPE_FUNCTIONS)}")
        if self.distance_kernel not in DISTANCE_KERNELS:
            raise ConfigError(f"unknown distance kernel {self.distance_kernel!r}")
        if self.level not in ("graph", "node"):
            raise ConfigError("level must be 'graph' or 'node'")
        if self.target not in ("binary", "multiclass", "regression"):
            raise ConfigError("target must be 'binary', 'multiclass' or 'regression'")
        if self.target == "multiclass" and self.n_classes < 3:
            raise ConfigError("multiclass target needs n_classes >= 3")
        if self.threshold != "median" and not isinstance(self.threshold, (int, float)):
            raise ConfigError("threshold must be a number or 'median'")
        if len(self.split) != 3 or any(s < 0 for s in self.split) or sum(self.split) > 1 + 1e-9:
            raise ConfigError("split must be three non-negative fractions summing to <= 1")
        return self

    @property
    def classes(self) -> int:
        return self.n_classes if self.target == "multiclass" else 1

    def feature_function(self, k: int, c: int = 0):
        names = self.shape_functions
        return SHAPE_FUNCTIONS[names[(k + c) % len(names)]]

    def to_dict(self):
        d = asdict(self)
        d["n_nodes"] = list(self.n_nodes)
        d["shape_functions"] = list(self.shape_functions)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        for key in ("n_nodes", "shape_functions", "split"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validate()


def rule_scores(g: GraphInstance, cfg: SyntheticConfig, profile=None) -> np.ndarray:
    """Per-node, per-class scores of the generator's labeling rule, shape (N, C)."""
    prof = profile if profile is not None else all_pairs_distances(g)
    dist = prof.dist
    kern = DISTANCE_KERNELS[cfg.distance_kernel]
    weight = np.where(dist == UNREACHABLE, 0.0, kern(np.where(dist == UNREACHABLE, 0, dist).astype(np.float64)))
    if cfg.normalize:
        weight = weight / prof.pair_count
    out = np.empty((g.node_count, cfg.classes))
    for c in range(cfg.classes):
        gsum = sum(cfg.feature_function(k, c)(g.features[:, k]) for k in range(g.n_features))
        out[:, c] = weight @ gsum
    return out


def _random_graph(rng, n, p, d, kind):
    iu = np.triu_indices(n, k=1)
    keep = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    if kind == "binary":
        feats = (rng.random((n, d)) < 0.3).astype(np.float64)
    else:
        feats = rng.random((n, d))
    return edges, feats


def _labels_from_scores(scores, cfg, rng):
    if cfg.target == "multiclass":
        return np.argmax(scores, axis=1)
    s = scores[:, 0]
    if cfg.target == "regression":
        return s + cfg.noise * rng.standard_normal(len(s)) if cfg.noise else s.copy()
    thr = float(np.median(s)) if cfg.threshold == "median" else float(cfg.threshold)
    return (s > thr).astype(np.int64)


def generate_synthetic(cfg: SyntheticConfig) -> List[GraphInstance]:
    """Deterministic random graphs labeled by the rule in ``cfg``.

    For ``level="graph"`` every graph gets a ``graph_label``; for
    ``level="node"`` every node gets a label and each graph carries random
    train/val/test masks drawn with proportions ``cfg.split``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.n_nodes
    raw = []
    for _ in range(cfg.n_graphs):
        n = int(rng.integers(lo, hi + 1))
        raw.append(_random_graph(rng, n, cfg.edge_prob, cfg.n_features, cfg.feature_kind))
    graphs = [GraphInstance(features=f, edges=e) for e, f in raw]
    label_rng = np.random.default_rng([cfg.seed, 1])
    if cfg.level == "graph":
        scores = np.stack([rule_scores(g, cfg).sum(axis=0) for g in graphs])
        labels = _labels_from_scores(scores, cfg, label_rng)
        for g, y in zip(graphs, labels):
            g.graph_label = y.item()
        return graphs
    out = []
    for g in graphs:
        y = _labels_from_scores(rule_scores(g, cfg), cfg, label_rng)
        perm = label_rng.permutation(g.node_count)
        n_tr = int(round(cfg.split[0] * g.node_count))
        n_va = int(round(cfg.split[1] * g.node_count))
        n_te = min(int(round(cfg.split[2] * g.node_count)), g.node_count - n_tr - n_va)
        masks = {}
        for name, idx in zip(MASK_NAMES, (perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:n_tr + n_va + n_te])):
            masks[name] = idx
        out.append(GraphInstance(features=g.features, edges=g.edges, node_labels=y, masks=masks))
    return out
