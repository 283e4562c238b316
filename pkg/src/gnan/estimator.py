"""scikit-learn compatible estimators.

``X`` is a sequence of :class:`~gnan.graph.GraphInstance`.  Graph-level
estimators predict one value per graph.  Node-level estimators train on the
``train`` mask of every graph and predict every node, concatenated over
graphs in order.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, SchemaError
from .explain import record_feature_stats
from .graph import GraphInstance, compute_profiles
from .training import TaskData, TrainConfig, build_model, fit, predict_logits, task_name

LEVELS = ("graph", "node")


def infer_head(y) -> str:
    """``regression`` for non-integral targets, else ``binary`` or ``multiclass`` by class count."""
    y = np.asarray(y)
    if y.dtype.kind == "f" and not np.all(np.isfinite(y)):
        raise SchemaError("targets contain non-finite values")
    if y.dtype.kind == "f" and not np.all(y == np.round(y)):
        return "regression"
    return "binary" if len(np.unique(y)) <= 2 else "multiclass"


def encode_labels(y, classes=None):
    """Map labels to ``0..C-1`` using ``classes`` (sorted unique labels by default)."""
    y = np.asarray(y)
    classes = np.unique(y) if classes is None else np.asarray(classes)
    idx = np.searchsorted(classes, y)
    idx = np.clip(idx, 0, len(classes) - 1)
    if len(y) and not np.all(classes[idx] == y):
        unknown = sorted(set(np.asarray(y).tolist()) - set(classes.tolist()))
        raise SchemaError(f"labels {unknown} were not seen during training")
    return idx.astype(np.int64), classes


def max_finite_distance(profiles) -> int:
    return max((int(p.dist.max()) for p in profiles), default=0)


def all_nodes(graphs) -> np.ndarray:
    return np.asarray([(gi, i) for gi, g in enumerate(graphs) for i in range(g.node_count)],
                      dtype=np.int64).reshape(-1, 2)


def _as_graphs(X) -> list:
    if isinstance(X, GraphInstance):
        X = [X]
    graphs = list(X)
    if not graphs or not all(isinstance(g, GraphInstance) for g in graphs):
        raise SchemaError("X must be a non-empty sequence of GraphInstance")
    d = {g.n_features for g in graphs}
    if len(d) != 1:
        raise SchemaError(f"graphs disagree on the feature dimension: {sorted(d)}")
    return graphs


class _GNANBase(BaseEstimator):
    def __init__(self, level: str = "graph", hidden_layers: int = 3, hidden_width: int = 64,
                 dropout: float = 0.0, learning_rate: float = 1e-2, weight_decay: float = 0.0,
                 epochs: int = 1000, batch_size: int = 32, early_stopping_patience: Optional[int] = None,
                 normalize_by_count: bool = True, per_feature_distance: bool = False, init: str = "uniform",
                 max_distance: Optional[int] = None, precision: str = "f64", seed: int = 0, threads: int = 1):
        self.level = level
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.early_stopping_patience = early_stopping_patience
        self.normalize_by_count = normalize_by_count
        self.per_feature_distance = per_feature_distance
        self.init = init
        self.max_distance = max_distance
        self.precision = precision
        self.seed = seed
        self.threads = threads

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           dropout=self.dropout, hidden_layers=self.hidden_layers, hidden_width=self.hidden_width,
                           batch_size=self.batch_size, early_stopping_patience=self.early_stopping_patience,
                           normalize_by_count=self.normalize_by_count,
                           per_feature_distance=self.per_feature_distance, init=self.init, seed=self.seed,
                           precision=self.precision).validate()

    def _train_data(self, graphs, y):
        if self.level not in LEVELS:
            raise ConfigError(f"level must be one of {LEVELS}, got {self.level!r}")
        profiles = compute_profiles(graphs, self.max_distance, self.threads)
        if self.level == "graph":
            data = TaskData.for_graphs(graphs, y=None, profiles=profiles) if y is None else \
                TaskData.for_graphs(graphs, y=np.asarray(y), profiles=profiles)
        else:
            data = TaskData.for_nodes(graphs, split="train", profiles=profiles)
            if y is not None:
                y = np.asarray(y)
                if len(y) != len(data):
                    raise SchemaError(f"y has {len(y)} entries but there are {len(data)} training nodes")
                data.y = y
        if any(v is None for v in data.y.tolist()):
            raise SchemaError("some training samples have no label")
        return data

    def _fit(self, X, y):
        graphs = _as_graphs(X)
        cfg = self._config()
        data = self._train_data(graphs, y)
        head = self._select_head(data)
        C = len(self.classes_) if head == "multiclass" else None
        model = build_model(graphs[0].n_features, task_name(self.level, head), cfg, C)
        record_feature_stats(model, np.concatenate([g.features for g in graphs], axis=0))
        model.metadata["max_distance"] = max_finite_distance(data.profiles)
        _, self.history_ = fit(model, data, cfg)
        self.model_ = model
        self.n_features_in_ = graphs[0].n_features
        return self

    def decision_function(self, X) -> np.ndarray:
        """Pre-activation scores, shape (n_samples, C)."""
        check_is_fitted(self, "model_")
        graphs = _as_graphs(X)
        if graphs[0].n_features != self.n_features_in_:
            raise SchemaError(f"graphs have {graphs[0].n_features} features but the model expects "
                              f"{self.n_features_in_}")
        profiles = compute_profiles(graphs, self.max_distance, self.threads)
        if self.level == "graph":
            data = TaskData(graphs, profiles, "graph", np.arange(len(graphs)), np.zeros(len(graphs)))
        else:
            anchors = all_nodes(graphs)
            data = TaskData(graphs, profiles, "node", anchors, np.zeros(len(anchors)))
        return predict_logits(self.model_, data)


class GNANClassifier(ClassifierMixin, _GNANBase):
    """Graph Neural Additive Network classifier (binary or multiclass).

    Attributes
    ----------
    classes_ : ndarray
        Sorted original labels; column order of :meth:`predict_proba`.
    model_ : GnanModel
    """

    def _select_head(self, data):
        enc, self.classes_ = encode_labels(data.y)
        if len(self.classes_) < 2:
            raise ConfigError("classification needs at least two classes in the training data")
        data.y = enc
        return "binary" if len(self.classes_) == 2 else "multiclass"

    def fit(self, X, y=None):
        return self._fit(X, y)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        p = self.model_.activate(self.decision_function(X))
        if self.model_.head == "binary":
            return np.column_stack([1.0 - p, p])
        return p

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class GNANRegressor(RegressorMixin, _GNANBase):
    """Graph Neural Additive Network regressor (L1 loss)."""

    def _select_head(self, data):
        data.y = np.asarray(data.y, dtype=np.float64)
        return "regression"

    def fit(self, X, y=None):
        return self._fit(X, y)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X)[:, 0]


__all__ = ["GNANClassifier", "GNANRegressor", "infer_head", "encode_labels"]
