"""The GNAN forward computation.

For node ``i`` and feature ``k`` the representation is::

    h[i, k] = sum_j  w(i, j) * rho(scaled(j, i)) (.) f_k(x[j, k])

with ``w(i, j) = 1 / #dist_i(j, i)`` (or 1 without normalization) and
``(.)`` the element-wise product over the ``C`` output channels.  Node
predictions apply the head activation to ``sum_k h[i, k]``; graph
predictions to ``sum_i sum_k h[i, k]``.

Three evaluation routes are provided and checked against each other:

* :func:`node_representations_naive` -- literal triple loop over
  ``(i, j, k)``, scalar network evaluations.
* :func:`node_representations_tensor` -- the dense ``M @ F`` contraction.
* :class:`AggregationPlan` -- a sparse, bucketed form used for training,
  which evaluates ``rho`` once per distinct distance and also supplies the
  backward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, SchemaError
from .graph import UNREACHABLE, DistanceProfile, GraphInstance, scale_distance
from .nn import ShapeNetwork

MODEL_FORMAT = "gnan-model"
MODEL_VERSION = 1

TASKS = (
    "node-binary", "node-multiclass", "node-regression",
    "graph-binary", "graph-multiclass", "graph-regression",
)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class GnanModel:
    """Feature shape networks ``f_1..f_d`` plus a distance network ``rho``.

    Parameters
    ----------
    n_features : int
    task : str
        One of :data:`TASKS`.
    n_classes : int, optional
        Required for multiclass tasks; output dimension ``C``.
    hidden_layers : int, default=3
        Number of hidden ReLU layers in every shape network.
    hidden_width : int, default=64
    dropout : float, default=0.0
    normalize_by_count : bool, default=True
        Divide each summand by the size of its distance bucket.
    per_feature_distance : bool, default=False
        Learn one distance network per feature instead of a shared one.
    rng : numpy.random.Generator, optional
        Initialization stream.
    init : {"uniform", "kaiming"}, default="uniform"
    dtype : numpy dtype, default=float64
    """

    def __init__(self, n_features: int, task: str = "graph-binary", n_classes: Optional[int] = None,
                 hidden_layers: int = 3, hidden_width: int = 64, dropout: float = 0.0,
                 normalize_by_count: bool = True, per_feature_distance: bool = False,
                 rng: Optional[np.random.Generator] = None, init: str = "uniform", dtype=np.float64,
                 _init=True):
        if task not in TASKS:
            raise ContractError(f"unknown task {task!r}; expected one of {TASKS}")
        if task.endswith("multiclass"):
            if n_classes is None or n_classes < 2:
                raise ContractError("multiclass tasks need n_classes >= 2")
        elif n_classes not in (None, 1, 2):
            raise ContractError(f"task {task!r} has a single output; got n_classes={n_classes}")
        if n_features < 1 or hidden_layers < 0 or hidden_width < 1:
            raise ContractError("n_features and hidden_width must be >= 1, hidden_layers >= 0")
        self.n_features = int(n_features)
        self.task = task
        self.n_classes = int(n_classes) if task.endswith("multiclass") else (2 if task.endswith("binary") else 1)
        self.hidden_layers = int(hidden_layers)
        self.hidden_width = int(hidden_width)
        self.dropout = float(dropout)
        self.normalize_by_count = bool(normalize_by_count)
        self.per_feature_distance = bool(per_feature_distance)
        self.dtype = np.dtype(dtype)
        self.metadata = {}
        if _init:
            rng = np.random.default_rng(0) if rng is None else rng
            dims = [1] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
            self.feature_nets = ShapeNetwork(dims, n_nets=self.n_features, dropout=dropout, rng=rng,
                                             init=init, dtype=dtype)
            self.distance_net = ShapeNetwork(dims, n_nets=self.n_features if per_feature_distance else 1,
                                             dropout=dropout, rng=rng, init=init, dtype=dtype)

    @property
    def level(self) -> str:
        return self.task.split("-")[0]

    @property
    def head(self) -> str:
        return self.task.split("-")[1]

    @property
    def output_dim(self) -> int:
        """``C``: 1 for binary/regression, the number of classes otherwise."""
        return self.n_classes if self.head == "multiclass" else 1

    def parameters(self) -> List[np.ndarray]:
        return self.feature_nets.parameters() + self.distance_net.parameters()

    def set_parameters(self, values: Sequence[np.ndarray]) -> None:
        for p, v in zip(self.parameters(), values):
            p[...] = v

    def copy(self) -> "GnanModel":
        new = GnanModel.__new__(GnanModel)
        new.__dict__.update(self.__dict__)
        new.feature_nets = self.feature_nets.copy()
        new.distance_net = self.distance_net.copy()
        new.metadata = json.loads(json.dumps(self.metadata))
        return new

    def check_graph(self, g: GraphInstance) -> None:
        if g.n_features != self.n_features:
            raise SchemaError(f"graph has {g.n_features} features but the model expects {self.n_features}")

    def feature_outputs(self, X) -> np.ndarray:
        """``f_k(X[:, k])`` for every column, shape (N, d, C)."""
        X = np.asarray(X, dtype=self.dtype)
        return self.feature_nets(X.T).transpose(1, 0, 2)

    def distance_outputs(self, scaled) -> np.ndarray:
        """``rho`` at the given scaled distances, shape (n_rho, n, C)."""
        return self.distance_net(np.asarray(scaled, dtype=self.dtype).ravel())

    def activate(self, logits):
        """Head activation applied to pre-activation scores (..., C)."""
        logits = np.asarray(logits, dtype=np.float64)
        if self.head == "binary":
            return sigmoid(logits[..., 0])
        if self.head == "multiclass":
            return softmax(logits, axis=-1)
        return logits[..., 0]

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "task": self.task,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "hidden_layers": self.hidden_layers,
            "hidden_width": self.hidden_width,
            "dropout": self.dropout,
            "normalize_by_count": self.normalize_by_count,
            "per_feature_distance": self.per_feature_distance,
            "dtype": self.dtype.name,
            "metadata": self.metadata,
            "feature_nets": self.feature_nets.to_dict(),
            "distance_net": self.distance_net.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GnanModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ContractError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} document")
        model = cls(d["n_features"], d["task"], n_classes=d["n_classes"] if d["task"].endswith("multiclass") else None,
                    hidden_layers=d["hidden_layers"], hidden_width=d["hidden_width"], dropout=d["dropout"],
                    normalize_by_count=d["normalize_by_count"], per_feature_distance=d["per_feature_distance"],
                    dtype=d["dtype"], _init=False)
        model.metadata = d.get("metadata", {})
        model.feature_nets = ShapeNetwork.from_dict(d["feature_nets"])
        model.distance_net = ShapeNetwork.from_dict(d["distance_net"])
        want_rho = model.n_features if model.per_feature_distance else 1
        if model.feature_nets.n_nets != model.n_features or model.distance_net.n_nets != want_rho:
            raise ContractError("stored network counts do not match n_features / per_feature_distance")
        if model.feature_nets.output_dim != model.output_dim or model.distance_net.output_dim != model.output_dim:
            raise ContractError("stored network output dimension does not match the task")
        return model

    def __repr__(self):
        return (f"GnanModel(task={self.task!r}, d={self.n_features}, C={self.output_dim}, "
                f"layers={self.hidden_layers}x{self.hidden_width}, per_feature_distance={self.per_feature_distance})")


def save_model(model: GnanModel, path) -> None:
    """Write ``model`` as JSON; floats are stored with full round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> GnanModel:
    with open(Path(path), encoding="utf-8") as fh:
        return GnanModel.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# reference routes


def _weights(model, prof):
    if model.normalize_by_count:
        return 1.0 / prof.pair_count
    return np.ones(prof.dist.shape)


def node_representations_naive(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Node representations by the defining sum, shape (N, d, C).

    Every network value comes from a scalar evaluation; ``rho`` is memoized
    per distinct scaled distance.  ``j`` is summed in ascending order.
    """
    model.check_graph(g)
    if prof.node_count != g.node_count:
        raise ContractError("distance profile does not belong to this graph")
    n, d, c = g.node_count, model.n_features, model.output_dim
    fvals = [[model.feature_nets.eval_one(k, g.features[j, k]) for k in range(d)] for j in range(n)]
    rho_cache = {}

    def rho(k, s):
        key = (k, s)
        if key not in rho_cache:
            rho_cache[key] = model.distance_net.eval_one(k, s)
        return rho_cache[key]

    h = np.zeros((n, d, c))
    for i in range(n):
        for j in range(n):
            w = 1.0 / prof.pair_count[i, j] if model.normalize_by_count else 1.0
            s = float(prof.scaled[i, j])
            for k in range(d):
                r = rho(k if model.per_feature_distance else 0, s)
                h[i, k] += w * r * fvals[j][k]
    return h


def distance_matrix(model: GnanModel, prof: DistanceProfile) -> np.ndarray:
    """``M[r, c, i, j] = w(i, j) * rho_r(scaled(j, i))[c]``, shape (n_rho, C, N, N)."""
    n = prof.node_count
    rho = model.distance_outputs(prof.scaled)  # (n_rho, N*N, C)
    rho = rho.reshape(rho.shape[0], n, n, -1).transpose(0, 3, 1, 2)
    return rho * _weights(model, prof)[None, None]


def node_representations_tensor(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Node representations as the contraction ``M @ F`` per class, shape (N, d, C)."""
    model.check_graph(g)
    if prof.node_count != g.node_count:
        raise ContractError("distance profile does not belong to this graph")
    M = distance_matrix(model, prof)  # (n_rho, C, N, N)
    F = model.feature_outputs(g.features)  # (N, d, C)
    if model.per_feature_distance:
        Fk = F.transpose(1, 2, 0)[..., None]  # (d, C, N, 1)
        h = np.matmul(M, Fk)[..., 0]  # (d, C, N)
        return h.transpose(2, 0, 1)
    h = np.matmul(M[0], F.transpose(2, 0, 1))  # (C, N, d)
    return h.transpose(1, 2, 0)


def node_logits(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Pre-activation node scores ``sum_k h[i, k]``, shape (N, C)."""
    return node_representations_tensor(model, g, prof).sum(axis=1)


def graph_representation(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Sum-pooled representation ``h = sum_i h_i``, shape (d, C)."""
    return node_representations_tensor(model, g, prof).sum(axis=0)


def graph_logit(model: GnanModel, g: GraphInstance, prof: DistanceProfile) -> np.ndarray:
    """Pre-activation graph score ``sum_k [h]_k``, shape (C,)."""
    return graph_representation(model, g, prof).sum(axis=0)


def predict_node(model: GnanModel, g: GraphInstance, prof: DistanceProfile, i: int):
    """Probability (binary), class distribution (multiclass) or value (regression) of node ``i``."""
    if not 0 <= i < g.node_count:
        raise IndexError(f"node index {i} out of range for a graph with {g.node_count} nodes")
    return model.activate(node_logits(model, g, prof)[i])


def predict_graph(model: GnanModel, g: GraphInstance, prof: DistanceProfile):
    return model.activate(graph_logit(model, g, prof))


# --------------------------------------------------------------------------
# bucketed training route


@dataclass
class GraphBuckets:
    """Per-graph pieces of a graph-level :class:`AggregationPlan`."""

    dist_values: np.ndarray  # (B,) distinct distance values
    column_weights: np.ndarray  # (B, N): sum_i w(i, j) [dist(i, j) == value]


def _graph_buckets(prof, normalize):
    w = 1.0 / prof.pair_count if normalize else np.ones(prof.dist.shape)
    vals, inv = np.unique(prof.dist, return_inverse=True)
    inv = inv.reshape(prof.dist.shape)
    n = prof.node_count
    cw = np.zeros((len(vals), n))
    np.add.at(cw, (inv, np.broadcast_to(np.arange(n), inv.shape)), w)
    return GraphBuckets(vals, cw)


def graph_buckets(profiles: Sequence[DistanceProfile], normalize: bool = True) -> List[GraphBuckets]:
    return [_graph_buckets(p, normalize) for p in profiles]


class AggregationPlan:
    """Sparse bucketed evaluation of GNAN scores for a batch.

    Each plan row ``u`` ties an output (a graph, or an anchor node) to one
    distinct distance value and holds the normalization weights of the
    source nodes in that bucket.  Scores are then::

        logits[o, c] = sum_{u -> o} sum_k rho_k(value(u))[c] * (agg[u] @ F[:, k, c])

    so ``rho`` is evaluated only once per distinct distance in the batch.
    Rows are grouped by output, in output order.

    Build with :meth:`for_graphs` or :meth:`for_nodes`.
    """

    def __init__(self, features, agg, out_index, n_out, dist_values, value_index):
        self.features = np.ascontiguousarray(features)
        self.agg = agg
        self.n_out = n_out
        self.out_index = out_index
        self.out_starts = np.flatnonzero(np.r_[True, out_index[1:] != out_index[:-1]])
        if len(self.out_starts) != n_out:
            raise ContractError("every plan output needs at least one row")
        self.dist_values = dist_values
        self.scaled_values = scale_distance(dist_values)
        self.value_index = value_index
        self.value_order = np.argsort(value_index, kind="stable")
        sorted_vals = value_index[self.value_order]
        self.value_starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])

    @classmethod
    def for_graphs(cls, graphs: Sequence[GraphInstance], buckets: Sequence[GraphBuckets]):
        """One output per graph."""
        data, indices, lengths, out_idx, dvals = [], [], [], [], []
        offset = 0
        for gi, b in enumerate(buckets):
            nb, n = b.column_weights.shape
            data.append(b.column_weights.ravel())
            indices.append(np.tile(np.arange(offset, offset + n), nb))
            lengths.append(np.full(nb, n))
            out_idx.append(np.full(nb, gi))
            dvals.append(b.dist_values)
            offset += n
        return cls._assemble(graphs, data, indices, lengths, out_idx, dvals, offset)

    @classmethod
    def for_nodes(cls, graphs: Sequence[GraphInstance], profiles: Sequence[DistanceProfile], anchors,
                  normalize: bool = True):
        """One output per anchor ``(graph_index, node_index)`` pair, in the given order."""
        anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
        offsets = np.cumsum([0] + [g.node_count for g in graphs])
        data, indices, lengths, out_idx, dvals = [], [], [], [], []
        for o, (gi, i) in enumerate(anchors):
            prof = profiles[gi]
            drow = prof.dist[i]
            order = np.argsort(drow, kind="stable")
            vals, cnt = np.unique(drow, return_counts=True)
            w = 1.0 / prof.pair_count[i, order] if normalize else np.ones(len(drow))
            data.append(w)
            indices.append(order + offsets[gi])
            lengths.append(cnt)
            out_idx.append(np.full(len(vals), o))
            dvals.append(vals)
        return cls._assemble(graphs, data, indices, lengths, out_idx, dvals, offsets[-1])

    @classmethod
    def _assemble(cls, graphs, data, indices, lengths, out_idx, dvals, n_cols):
        lengths = np.concatenate(lengths)
        indptr = np.r_[0, np.cumsum(lengths)]
        agg = sp.csr_matrix((np.concatenate(data), np.concatenate(indices), indptr),
                            shape=(len(lengths), n_cols))
        uniq, value_index = np.unique(np.concatenate(dvals), return_inverse=True)
        features = np.concatenate([g.features for g in graphs], axis=0)
        return cls(features, agg, np.concatenate(out_idx), len(out_idx), uniq, value_index)

    def forward(self, model: GnanModel, train: bool = False, rng=None):
        """Pre-activation scores (n_out, C) and a cache for :meth:`backward`."""
        d, C = model.n_features, model.output_dim
        X = self.features.astype(model.dtype, copy=False)
        F, fcache = model.feature_nets.forward(X.T, train=train, rng=rng)  # (d, Ntot, C)
        R, rcache = model.distance_net.forward(self.scaled_values.astype(model.dtype), train=train, rng=rng)
        n_tot = X.shape[0]
        Fm = F.transpose(1, 0, 2).reshape(n_tot, d * C)
        G = (self.agg @ Fm).reshape(-1, d, C)  # (U, d, C)
        Rsel = R[:, self.value_index, :].transpose(1, 0, 2)  # (U, n_rho, C)
        s = (Rsel * G).sum(axis=1)  # (U, C)
        logits = np.add.reduceat(s, self.out_starts, axis=0)
        return logits, (fcache, rcache, G, Rsel)

    def backward(self, model: GnanModel, cache, dlogits):
        """Parameter gradients (aligned with ``model.parameters()``) given d loss / d logits."""
        fcache, rcache, G, Rsel = cache
        d, C = model.n_features, model.output_dim
        ds = np.asarray(dlogits)[self.out_index]  # (U, C)
        dG = np.broadcast_to(ds[:, None, :] * Rsel, G.shape)  # (U, d, C)
        dRsel = ds[:, None, :] * G
        if not model.per_feature_distance:
            dRsel = dRsel.sum(axis=1, keepdims=True)
        n_rows, n_rho = dRsel.shape[:2]
        dR = np.add.reduceat(dRsel.reshape(n_rows, n_rho * C)[self.value_order], self.value_starts, axis=0)
        dR = dR.reshape(-1, n_rho, C).transpose(1, 0, 2)
        dF = (self.agg.T @ dG.reshape(n_rows, d * C)).reshape(-1, d, C).transpose(1, 0, 2)
        gf, _ = model.feature_nets.backward(fcache, np.ascontiguousarray(dF))
        gr, _ = model.distance_net.backward(rcache, np.ascontiguousarray(dR))
        return gf + gr


__all__ = [
    "TASKS", "GnanModel", "AggregationPlan", "UNREACHABLE",
    "node_representations_naive", "node_representations_tensor", "distance_matrix",
    "node_logits", "graph_representation", "graph_logit", "predict_node", "predict_graph",
    "GraphBuckets", "graph_buckets", "save_model", "load_model", "sigmoid", "softmax",
]
