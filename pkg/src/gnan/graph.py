"""Graph data model and all-pairs hop distances.

A :class:`GraphInstance` is the unit of node tasks and the element of
graph-task datasets.  :func:`all_pairs_distances` turns one into an
immutable :class:`DistanceProfile` holding the hop distances, the
per-anchor distance-bucket counts used for normalization, and the scaled
distances ``1 / (1 + dist)`` fed to the distance network.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, GraphValidationError, SchemaError

UNREACHABLE = -1
"""Sentinel hop distance for node pairs with no connecting path."""

MASK_NAMES = ("train", "val", "test")


def _canonical_edges(edges, n_nodes):
    arr = np.asarray(edges if len(edges) else np.zeros((0, 2)), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphValidationError(f"edges must be (E, 2), got shape {arr.shape}")
    bad = (arr < 0) | (arr >= n_nodes)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise GraphValidationError(
            f"edge {row} ({arr[row, 0]}, {arr[row, 1]}) references a node outside 0..{n_nodes - 1}"
        )
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if len(arr):
        arr = np.unique(arr, axis=0)
    return arr.reshape(-1, 2)


@dataclass(eq=False)
class GraphInstance:
    """An undirected graph with per-node feature vectors.

    Edges are canonicalized on construction: directed pairs are symmetrized,
    stored once as ``u < v``, self-loops dropped and duplicates removed.

    Parameters
    ----------
    features : array-like of shape (n_nodes, n_features)
    edges : array-like of shape (n_edges, 2)
    node_labels : array-like of shape (n_nodes,), optional
    graph_label : scalar, optional
    masks : mapping of {"train", "val", "test"} to boolean arrays, optional
    positions : array-like of shape (n_nodes, 2), optional
        2D coordinates used when drawing local explanations.
    """

    features: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    node_labels: Optional[np.ndarray] = None
    graph_label: Optional[float] = None
    masks: Optional[Dict[str, np.ndarray]] = None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise SchemaError(f"features must be a non-empty (N, d) matrix, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise GraphValidationError("features contain non-finite values")
        self.features = feats
        n = feats.shape[0]
        self.edges = _canonical_edges(self.edges, n)

        if self.node_labels is not None:
            labels = np.asarray(self.node_labels)
            if labels.shape != (n,):
                raise SchemaError(f"node_labels must have shape ({n},), got {labels.shape}")
            self.node_labels = labels
        if self.masks is not None:
            self.masks = self._validate_masks(self.masks, n)
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=np.float64)
            if pos.shape != (n, 2):
                raise SchemaError(f"positions must have shape ({n}, 2), got {pos.shape}")
            self.positions = pos

    @staticmethod
    def _validate_masks(masks: Mapping, n: int) -> Dict[str, np.ndarray]:
        out = {}
        for name, mask in masks.items():
            if name not in MASK_NAMES:
                raise SchemaError(f"unknown mask {name!r}; expected one of {MASK_NAMES}")
            m = np.asarray(mask)
            if m.dtype != bool:
                idx = m.astype(np.int64).ravel()
                if len(idx) and (idx.min() < 0 or idx.max() >= n):
                    raise GraphValidationError(f"mask {name!r} has node index outside 0..{n - 1}")
                m = np.zeros(n, dtype=bool)
                m[idx] = True
            elif m.shape != (n,):
                raise SchemaError(f"mask {name!r} must have length {n}")
            out[name] = m
        names = list(out)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                if np.any(out[names[a]] & out[names[b]]):
                    raise GraphValidationError(f"masks {names[a]!r} and {names[b]!r} overlap")
        return out

    @property
    def node_count(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def neighbors(self):
        """Adjacency lists, one sorted list per node."""
        adj = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].append(int(v))
            adj[v].append(int(u))
        for nb in adj:
            nb.sort()
        return adj

    def mask(self, name: str) -> np.ndarray:
        """Node indices selected by ``name``; every labeled node if no masks are set."""
        if self.masks is None or name not in self.masks:
            if self.masks is None and name == "train":
                return np.arange(self.node_count)
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.masks[name])

    def permute(self, perm: Sequence[int]) -> "GraphInstance":
        """Relabel nodes so that old node ``perm[new]`` becomes node ``new``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return GraphInstance(
            features=self.features[perm],
            edges=inv[self.edges] if len(self.edges) else self.edges,
            node_labels=None if self.node_labels is None else self.node_labels[perm],
            graph_label=self.graph_label,
            masks=None if self.masks is None else {k: m[perm] for k, m in self.masks.items()},
            positions=None if self.positions is None else self.positions[perm],
        )

    def __eq__(self, other):
        if not isinstance(other, GraphInstance):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(np.asarray(a), np.asarray(b))

        if self.masks is None or other.masks is None:
            masks_eq = self.masks is None and other.masks is None
        else:
            masks_eq = self.masks.keys() == other.masks.keys() and all(
                np.array_equal(self.masks[k], other.masks[k]) for k in self.masks
            )
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.edges, other.edges)
            and same(self.node_labels, other.node_labels)
            and same(self.graph_label, other.graph_label)
            and same(self.positions, other.positions)
            and masks_eq
        )

    def __repr__(self):
        return f"GraphInstance(N={self.node_count}, d={self.n_features}, edges={len(self.edges)})"


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DistanceProfile:
    """All-pairs hop distances of one graph.

    All matrices are indexed ``[i, j]`` with ``i`` the anchor node whose
    representation is being built and ``j`` the source node.

    Attributes
    ----------
    dist : ndarray of int64, shape (N, N)
        Hop distance, ``UNREACHABLE`` (-1) when no path exists.
    pair_count : ndarray of int64, shape (N, N)
        Number of nodes at the same distance from ``i`` as ``j`` is
        (the unreachable bucket counts like any other).
    scaled : ndarray of float64, shape (N, N)
        ``1 / (1 + dist)``, and 0 for unreachable pairs.
    """

    dist: np.ndarray
    pair_count: np.ndarray
    scaled: np.ndarray
    max_distance: Optional[int] = None

    @property
    def node_count(self) -> int:
        return self.dist.shape[0]

    def count(self, i: int, value: int) -> int:
        """Number of nodes ``j`` with ``dist(j, i) == value``."""
        return int(np.count_nonzero(self.dist[i] == value))

    def bucket_counts(self, i: int) -> Dict[int, int]:
        vals, cnt = np.unique(self.dist[i], return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}

    def distance_values(self) -> np.ndarray:
        """Distinct distance values present, ``UNREACHABLE`` first if present."""
        return np.unique(self.dist)

    @property
    def weights(self) -> np.ndarray:
        """Normalization factors ``1 / #dist_i(j, i)``."""
        return 1.0 / self.pair_count


def scale_distance(dist):
    """Map hop distances to ``[0, 1]``: ``1 / (1 + l)``, unreachable to 0."""
    d = np.asarray(dist)
    out = np.zeros(d.shape, dtype=np.float64)
    reach = d != UNREACHABLE
    out[reach] = 1.0 / (1.0 + d[reach])
    return out


def bfs_distances(adjacency, source: int, max_distance: Optional[int] = None) -> np.ndarray:
    """Hop distances from ``source`` to every node (``UNREACHABLE`` if none)."""
    n = len(adjacency)
    dist = np.full(n, UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if max_distance is not None and du >= max_distance:
            continue
        for v in adjacency[u]:
            if dist[v] == UNREACHABLE:
                dist[v] = du + 1
                queue.append(v)
    return dist


def all_pairs_distances(g: GraphInstance, max_distance: Optional[int] = None) -> DistanceProfile:
    """Breadth-first search from every node of ``g``.

    Parameters
    ----------
    g : GraphInstance
    max_distance : int, optional
        Treat pairs farther apart than this as unreachable. Bounds nothing
        about memory use of the dense matrices themselves, only the number of
        distinct buckets.
    """
    if max_distance is not None and max_distance < 0:
        raise ConfigError("max_distance must be non-negative")
    adj = g.neighbors()
    n = g.node_count
    dist = np.empty((n, n), dtype=np.int64)
    for s in range(n):
        dist[s] = bfs_distances(adj, s, max_distance)
    pair_count = np.empty_like(dist)
    for i in range(n):
        _, inv, cnt = np.unique(dist[i], return_inverse=True, return_counts=True)
        pair_count[i] = cnt[inv]
    return DistanceProfile(
        dist=_readonly(dist),
        pair_count=_readonly(pair_count),
        scaled=_readonly(scale_distance(dist)),
        max_distance=max_distance,
    )


def compute_profiles(graphs: Sequence[GraphInstance], max_distance=None, threads: int = 1):
    """Distance profiles for a dataset, optionally with a thread pool."""
    if threads <= 1 or len(graphs) < 2:
        return [all_pairs_distances(g, max_distance) for g in graphs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda g: all_pairs_distances(g, max_distance), graphs))
