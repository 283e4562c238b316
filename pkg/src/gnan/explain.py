"""Global and local explanations read directly off a trained model.

Global views are the learned univariate functions themselves (feature shape
curves, the distance curve) and their products (distance x feature
heatmaps).  Local views decompose a prediction additively: per-node
contributions and per-node-per-feature influences sum exactly to the
pre-activation score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import ConfigError, ContractError
from .graph import DistanceProfile, GraphInstance
from .model import GnanModel, distance_matrix, node_representations_tensor

DISTANCE = "distance"
"""Feature marker used for distance curves."""

POSITIVE_COLOR = "#1a9850"
NEGATIVE_COLOR = "#d73027"


@dataclass
class ShapeCurve:
    """One learned function sampled on a grid.

    ``values`` has shape (len(grid), C).  For distance curves ``grid`` holds
    hop distances (``inf`` for unreachable) and ``inputs`` the scaled values
    the network actually saw.  When ``recentered`` is true, ``offset`` (the
    function's value at 0) has been subtracted and is accounted for in
    ``bias_term``.
    """

    feature: Union[int, str]
    grid: np.ndarray
    values: np.ndarray
    inputs: Optional[np.ndarray] = None
    recentered: bool = False
    offset: Optional[np.ndarray] = None
    bias_term: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass
class HeatmapMatrix:
    """``cells[l, v, c] = rho(1 / (1 + l))[c] * f_k(v)[c]``.

    ``distances`` ends with ``inf`` (the unreachable row, ``rho(0)``).
    """

    feature: int
    distances: np.ndarray
    inputs: np.ndarray
    cells: np.ndarray
    recentered: bool = False


@dataclass
class ExplanationBundle:
    curves: List[ShapeCurve] = field(default_factory=list)
    heatmaps: List[HeatmapMatrix] = field(default_factory=list)
    node_contributions: Optional[np.ndarray] = None
    node_feature_influence: Optional[np.ndarray] = None
    metadata: Dict[str, object] = field(default_factory=dict)


# --------------------------------------------------------------------------
# feature statistics


def record_feature_stats(model: GnanModel, X) -> None:
    """Store the observed per-feature range and binary flags on ``model.metadata``."""
    X = np.asarray(X, dtype=np.float64)
    model.metadata["feature_min"] = X.min(axis=0).tolist()
    model.metadata["feature_max"] = X.max(axis=0).tolist()
    model.metadata["binary_features"] = [bool(np.all((col == 0) | (col == 1))) for col in X.T]


def _feature_grid(model, k, n_points, ranges, binary):
    is_binary = binary[k] if binary is not None else model.metadata.get("binary_features", [False] * model.n_features)[k]
    if is_binary:
        return np.array([0.0, 1.0]), True
    if ranges is not None and ranges[k] is not None:
        lo, hi = ranges[k]
    elif "feature_min" in model.metadata:
        lo, hi = model.metadata["feature_min"][k], model.metadata["feature_max"][k]
    else:
        lo, hi = 0.0, 1.0
    if n_points < 1:
        raise ConfigError("grid needs at least one point")
    if hi <= lo:
        return np.array([float(lo)]), False
    return np.linspace(lo, hi, n_points), False


def _eval_net(net, index, x):
    """Eval-mode outputs of one network of a bank at inputs ``x``, shape (n, C)."""
    x = np.asarray(x, dtype=net.dtype)
    full = np.zeros((net.n_nets, len(x)), dtype=net.dtype)
    full[index] = x
    return net(full)[index].astype(np.float64)


# --------------------------------------------------------------------------
# global views


def sample_shape_curves(model: GnanModel, n_points: int = 100, ranges=None, binary=None,
                        features: Optional[Sequence[int]] = None, grids=None,
                        recenter_binary: bool = True) -> List[ShapeCurve]:
    """Feature shape curves ``f_k`` in eval mode.

    Parameters
    ----------
    n_points : int, default=100
        Points per continuous feature.
    ranges : sequence of (lo, hi) or None, optional
        Overrides the training range recorded on the model.
    binary : sequence of bool, optional
        Overrides the recorded binary-feature flags.  Binary features are
        sampled at ``{0, 1}``.
    grids : mapping of feature index to array, optional
        Explicit grids; these win over everything else.
    recenter_binary : bool, default=True
        Subtract ``f_k(0)`` from binary curves and report the sum of the
        subtracted values as ``bias_term`` on each recentered curve.
    """
    ks = range(model.n_features) if features is None else features
    curves = []
    for k in ks:
        if grids is not None and k in grids:
            grid = np.asarray(grids[k], dtype=np.float64)
            if grid.size == 0:
                raise ConfigError(f"empty grid for feature {k}")
            is_binary = bool(np.all((grid == 0) | (grid == 1)))
        else:
            grid, is_binary = _feature_grid(model, k, n_points, ranges, binary)
        values = _eval_net(model.feature_nets, k, grid)
        curve = ShapeCurve(feature=int(k), grid=grid, values=values, inputs=grid)
        if recenter_binary and is_binary:
            offset = _eval_net(model.feature_nets, k, [0.0])[0]
            curve.values = values - offset
            curve.offset = offset
            curve.recentered = True
        curves.append(curve)
    recentered = [c for c in curves if c.recentered]
    if recentered:
        bias = np.sum([c.offset for c in recentered], axis=0)
        for c in recentered:
            c.bias_term = bias
    return curves


def distance_curve(model: GnanModel, max_distance: int, index: int = 0) -> ShapeCurve:
    """``rho`` at hop distances ``0..max_distance`` plus the unreachable point.

    ``index`` selects the distance network when one is learned per feature.
    """
    if max_distance < 0:
        raise ConfigError("max_distance must be >= 0")
    hops = np.r_[np.arange(max_distance + 1, dtype=np.float64), np.inf]
    inputs = 1.0 / (1.0 + hops)  # 1 / (1 + inf) == 0
    values = _eval_net(model.distance_net, index, inputs)
    feature = DISTANCE if model.distance_net.n_nets == 1 else f"{DISTANCE}:{index}"
    return ShapeCurve(feature=feature, grid=hops, values=values, inputs=inputs)


def distance_curves(model: GnanModel, max_distance: int) -> List[ShapeCurve]:
    return [distance_curve(model, max_distance, r) for r in range(model.distance_net.n_nets)]


def heatmap(model: GnanModel, k: int, max_distance: int, grid=None, n_points: int = 100) -> HeatmapMatrix:
    """Distance x feature products for feature ``k``.

    Binary features reduce to the single column ``v = 1`` of the recentered
    function ``f_k(1) - f_k(0)``.
    """
    if not 0 <= k < model.n_features:
        raise IndexError(f"feature {k} out of range")
    if grid is None:
        curve = sample_shape_curves(model, n_points=n_points, features=[k])[0]
    else:
        curve = sample_shape_curves(model, features=[k], grids={k: grid})[0]
    inputs, fvals = curve.grid, curve.values
    if curve.recentered:
        keep = inputs == 1.0
        inputs, fvals = inputs[keep], fvals[keep]
    rho = distance_curve(model, max_distance, k if model.per_feature_distance else 0)
    cells = rho.values[:, None, :] * fvals[None, :, :]
    return HeatmapMatrix(feature=int(k), distances=rho.grid, inputs=inputs, cells=cells, recentered=curve.recentered)


# --------------------------------------------------------------------------
# local views


def _check(model, g, prof):
    model.check_graph(g)
    if prof.node_count != g.node_count:
        raise ContractError("distance profile does not belong to this graph")


def node_contributions(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Total contribution of every anchor node, shape (N, C).

    Row ``i`` is ``sum_j w(i, j) rho(scaled(j, i)) (.) sum_k f_k(x_jk)``: the
    node's own pre-activation score, and its share of the graph score.
    """
    _check(model, g, prof)
    return node_representations_tensor(model, g, prof).sum(axis=1)


def node_contribution(model: GnanModel, g: GraphInstance, prof: DistanceProfile, i: int) -> np.ndarray:
    if not 0 <= i < g.node_count:
        raise IndexError(f"node index {i} out of range")
    return node_contributions(model, g, prof)[i]


def distance_weights(model: GnanModel, prof: DistanceProfile) -> np.ndarray:
    """``W[r, j, c] = sum_i w(i, j) rho_r(scaled(j, i))[c]``, the total weight node ``j`` receives."""
    M = distance_matrix(model, prof)  # (n_rho, C, N, N)
    return M.sum(axis=2).transpose(0, 2, 1)


def node_feature_influences(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Influence of node ``j`` on entry ``k`` of the graph representation, shape (N, d, C)."""
    _check(model, g, prof)
    F = model.feature_outputs(g.features).astype(np.float64)  # (N, d, C)
    W = distance_weights(model, prof)  # (n_rho, N, C)
    if model.per_feature_distance:
        return F * W.transpose(1, 0, 2)
    return F * W[0][:, None, :]


def node_feature_influence(model: GnanModel, g: GraphInstance, prof: DistanceProfile, j: int, k: int) -> np.ndarray:
    if not 0 <= j < g.node_count:
        raise IndexError(f"node index {j} out of range")
    if not 0 <= k < model.n_features:
        raise IndexError(f"feature {k} out of range")
    return node_feature_influences(model, g, prof)[j, k]


def bias_decomposition(model: GnanModel, g: GraphInstance, prof: DistanceProfile, curves: Sequence[ShapeCurve]):
    """Split the graph score into a recentered part and a bias part.

    With ``o_k`` the offsets removed from the recentered curves and
    ``W_jk`` the total distance weight of node ``j`` for feature ``k``::

        score = sum_jk W_jk (f_k(x_jk) - o_k)  +  sum_k o_k sum_j W_jk

    For a shared distance network the bias part is ``b * sum_j W_j`` with
    ``b`` the reported ``bias_term``.

    Returns
    -------
    recentered_part, bias_part : ndarray of shape (C,)
    """
    _check(model, g, prof)
    C = model.output_dim
    offsets = np.zeros((model.n_features, C))
    for c in curves:
        if c.recentered and isinstance(c.feature, int):
            offsets[c.feature] = c.offset
    F = model.feature_outputs(g.features).astype(np.float64) - offsets[None]
    W = distance_weights(model, prof)
    Wk = W.transpose(1, 0, 2) if model.per_feature_distance else np.broadcast_to(W[0][:, None, :], F.shape)
    recentered = (F * Wk).sum(axis=(0, 1))
    bias = (offsets[None] * Wk).sum(axis=(0, 1))
    return recentered, bias


def explain_graph(model: GnanModel, g: GraphInstance, prof: DistanceProfile, max_distance: Optional[int] = None,
                  heatmap_features: Sequence[int] = (), n_points: int = 100) -> ExplanationBundle:
    """Everything at once for one graph."""
    if max_distance is None:
        finite = prof.dist[prof.dist >= 0]
        max_distance = int(finite.max()) if finite.size else 0
    curves = sample_shape_curves(model, n_points=n_points) + distance_curves(model, max_distance)
    return ExplanationBundle(
        curves=curves,
        heatmaps=[heatmap(model, k, max_distance, n_points=n_points) for k in heatmap_features],
        node_contributions=node_contributions(model, g, prof),
        node_feature_influence=node_feature_influences(model, g, prof),
        metadata={"max_distance": max_distance},
    )


# --------------------------------------------------------------------------
# bootstrap


def percentile_band(samples, levels=(2.5, 97.5)):
    """Per-point percentiles over the leading (resample) axis."""
    samples = np.asarray(samples, dtype=np.float64)
    lo, hi = np.percentile(samples, levels, axis=0)
    return lo, hi


@dataclass
class BootstrapResult:
    curves: List[ShapeCurve]
    samples: List[np.ndarray]
    resamples: int
    levels: tuple
    metadata: Dict[str, object] = field(default_factory=dict)


def _curves_for(model, grids, max_distance):
    feats = sample_shape_curves(model, grids=grids)
    return feats + distance_curves(model, max_distance)


def bootstrap_bands(data, task: str, cfg, resamples: int = 200, levels=(2.5, 97.5), seed: Optional[int] = None,
                    n_points: int = 100, max_distance: Optional[int] = None, n_classes: Optional[int] = None,
                    reduced_epochs: Optional[int] = None, progress=None) -> BootstrapResult:
    """Percentile confidence bands for every shape curve and the distance curve.

    The point estimate is a model trained on ``data``.  Each resample draws
    ``len(data)`` samples with replacement from the ``bootstrap`` stream of
    ``seed`` and retrains with the same configuration and initialization
    seed, so the spread reflects data variability only.  All curves are
    evaluated on the grid of the point-estimate model.

    Parameters
    ----------
    data : training.TaskData
    task : str
    cfg : training.TrainConfig
    reduced_epochs : int, optional
        Train every model for this many epochs instead of ``cfg.epochs``;
        stamped into ``metadata``.
    """
    from dataclasses import replace

    from .training import build_model, fit, seed_stream

    if resamples < 2:
        raise ConfigError("bootstrap needs at least 2 resamples")
    if len(data) == 0:
        raise ConfigError("bootstrap needs a non-empty dataset")
    if reduced_epochs is not None:
        cfg = replace(cfg, epochs=int(reduced_epochs))
    seed = cfg.seed if seed is None else seed
    d = data.graphs[0].n_features
    X = np.concatenate([g.features for g in data.graphs], axis=0)

    point = build_model(d, task, cfg, n_classes)
    record_feature_stats(point, X)
    fit(point, data, cfg)
    if max_distance is None:
        dmax = [int(p.dist.max()) for p in data.profiles]
        max_distance = max(dmax) if dmax else 0
    curves = sample_shape_curves(point, n_points=n_points)
    grids = {c.feature: c.grid for c in curves}
    curves = _curves_for(point, grids, max_distance)

    rng = seed_stream(seed, "bootstrap")
    n = len(data)
    stacks = [[] for _ in curves]
    for r in range(resamples):
        rows = rng.integers(0, n, size=n)
        model = build_model(d, task, cfg, n_classes)
        record_feature_stats(model, X)
        fit(model, data.subset(rows), cfg)
        for s, c in zip(stacks, _curves_for(model, grids, max_distance)):
            s.append(c.values)
        if progress is not None:
            progress(r + 1, resamples)
    samples = []
    for c, s in zip(curves, stacks):
        arr = np.stack(s)
        c.lower, c.upper = percentile_band(arr, levels)
        samples.append(arr)
    meta = {"resamples": resamples, "levels": list(levels), "epochs": cfg.epochs,
            "mode": "reduced" if reduced_epochs is not None else "full", "seed": seed}
    return BootstrapResult(curves=curves, samples=samples, resamples=resamples, levels=tuple(levels), metadata=meta)


# --------------------------------------------------------------------------
# drawing data


@dataclass
class LocalDrawing:
    """Layout-annotated local explanation: node area is proportional to |contribution|."""

    positions: np.ndarray
    radii: np.ndarray
    colors: List[str]
    contributions: np.ndarray
    edges: np.ndarray
    class_index: int = 0


def spring_layout(g: GraphInstance, seed: int = 0) -> np.ndarray:
    """Deterministic force-directed positions in ``[-1, 1]^2``."""
    import networkx as nx

    G = nx.Graph()
    G.add_nodes_from(range(g.node_count))
    G.add_edges_from(map(tuple, g.edges.tolist()))
    pos = nx.spring_layout(G, seed=seed)
    return np.asarray([pos[i] for i in range(g.node_count)], dtype=np.float64)


def render_local_graph(g: GraphInstance, contributions, class_index: int = 0, positions=None,
                       max_radius: float = 1.0, seed: int = 0) -> LocalDrawing:
    """Drawing data for a local explanation.

    Uses ``positions``, else ``g.positions``, else a seeded spring layout.
    Node areas scale linearly with ``|contribution|`` (so radii with its
    square root); positive contributions are green and negative red.
    """
    c = np.asarray(contributions, dtype=np.float64)
    if c.ndim == 2:
        c = c[:, class_index]
    if c.shape != (g.node_count,):
        raise ContractError(f"need one contribution per node, got shape {c.shape}")
    if positions is None:
        positions = g.positions if g.positions is not None else spring_layout(g, seed)
    positions = np.asarray(positions, dtype=np.float64)
    mag = np.abs(c)
    top = mag.max()
    radii = max_radius * np.sqrt(mag / top) if top > 0 else np.full(len(c), max_radius)
    colors = [POSITIVE_COLOR if v >= 0 else NEGATIVE_COLOR for v in c]
    return LocalDrawing(positions=positions, radii=radii, colors=colors, contributions=c,
                        edges=g.edges.copy(), class_index=class_index)


def finite_or_inf(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))
