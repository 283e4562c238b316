"""Losses, the optimization loop, metrics and nested cross-validation."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from .exceptions import ConfigError, ContractError, NumericError, UndefinedMetricError
from .graph import DistanceProfile, GraphInstance, compute_profiles
from .model import AggregationPlan, GnanModel, GraphBuckets, graph_buckets
from .nn import AdamState, adam_step

logger = logging.getLogger(__name__)

PAPER_GRID = {
    "learning_rate": [1e-2, 1e-3],
    "weight_decay": [0.0, 5e-4],
    "dropout": [0.0, 0.6],
    "hidden_layers": [3, 5],
    "hidden_width": [64, 32],
}
"""Hyperparameter grid searched for GNAN in the original experiments."""

_STREAMS = {"init": 0, "dropout": 1, "shuffle": 2, "bootstrap": 3, "split": 4}


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from a single seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_STREAMS[name],)))


@dataclass
class TrainConfig:
    """Training and architecture settings.

    ``hidden_layers`` counts hidden ReLU layers of each shape network.
    ``batch_size`` applies to graph tasks only; node tasks are trained
    full-batch.  Early stopping is off unless ``early_stopping_patience`` is
    set, in which case the best-validation snapshot is returned.
    """

    epochs: int = 1000
    learning_rate: float = 1e-2
    weight_decay: float = 0.0
    dropout: float = 0.0
    hidden_layers: int = 3
    hidden_width: int = 64
    batch_size: int = 32
    early_stopping_patience: Optional[int] = None
    early_stopping_metric: str = "loss"
    regression_loss: str = "l1"
    normalize_by_count: bool = True
    per_feature_distance: bool = False
    init: str = "uniform"
    seed: int = 0
    precision: str = "f64"

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        for name in ("learning_rate", "weight_decay", "dropout"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.dropout >= 1:
            raise ConfigError("dropout must be < 1")
        if self.hidden_layers < 0 or self.hidden_width < 1 or self.batch_size < 1:
            raise ConfigError("hidden_layers >= 0, hidden_width >= 1 and batch_size >= 1 required")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ConfigError("early_stopping_patience must be >= 1")
        if self.early_stopping_metric not in ("loss", "accuracy"):
            raise ConfigError("early_stopping_metric must be 'loss' or 'accuracy'")
        if self.regression_loss not in ("l1", "mse"):
            raise ConfigError("regression_loss must be 'l1' or 'mse'")
        if self.init not in ("uniform", "kaiming"):
            raise ConfigError("init must be 'uniform' or 'kaiming'")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be 'f32' or 'f64'")
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def expand_grid(grid: Optional[Dict[str, Sequence]]) -> List[dict]:
    """Cartesian product of a parameter grid, in sorted-key order."""
    if not grid:
        return [{}]
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class TaskData:
    """Samples for one task: graphs, their profiles, sample indices and targets.

    ``index`` holds graph indices for graph tasks and ``(graph, node)``
    pairs for node tasks.  Classification targets are encoded as
    ``0..C-1``.
    """

    graphs: List[GraphInstance]
    profiles: List[DistanceProfile]
    level: str
    index: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @classmethod
    def for_graphs(cls, graphs, y=None, profiles=None, indices=None, max_distance=None, threads=1):
        graphs = list(graphs)
        profiles = compute_profiles(graphs, max_distance, threads) if profiles is None else list(profiles)
        idx = np.arange(len(graphs)) if indices is None else np.asarray(indices, dtype=np.int64)
        if y is None:
            y = np.asarray([graphs[i].graph_label for i in idx])
        return cls(graphs, profiles, "graph", idx, np.asarray(y))

    @classmethod
    def for_nodes(cls, graphs, split="train", y=None, profiles=None, anchors=None, max_distance=None, threads=1):
        graphs = list(graphs)
        profiles = compute_profiles(graphs, max_distance, threads) if profiles is None else list(profiles)
        if anchors is None:
            anchors = [(gi, int(i)) for gi, g in enumerate(graphs) for i in g.mask(split)]
        anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
        if y is None:
            y = np.asarray([graphs[gi].node_labels[i] for gi, i in anchors])
        return cls(graphs, profiles, "node", anchors, np.asarray(y))

    def subset(self, rows) -> "TaskData":
        rows = np.asarray(rows, dtype=np.int64)
        sub = TaskData(self.graphs, self.profiles, self.level, self.index[rows], self.y[rows])
        sub._buckets = self._bucket_cache()
        return sub

    def _bucket_cache(self) -> dict:
        if not hasattr(self, "_buckets"):
            self._buckets = {}
        return self._buckets

    def buckets(self, normalize: bool) -> List[GraphBuckets]:
        cache = self._bucket_cache()
        if normalize not in cache:
            cache[normalize] = graph_buckets(self.profiles, normalize)
        return cache[normalize]

    def plan(self, model: GnanModel, rows=None) -> AggregationPlan:
        index = self.index if rows is None else self.index[rows]
        if self.level == "graph":
            allb = self.buckets(model.normalize_by_count)
            return AggregationPlan.for_graphs([self.graphs[i] for i in index], [allb[i] for i in index])
        return AggregationPlan.for_nodes(self.graphs, self.profiles, index, model.normalize_by_count)


# --------------------------------------------------------------------------
# losses


def loss(head: str, logits, target, regression_loss: str = "l1"):
    """Mean loss over samples and its gradient with respect to the logits.

    Parameters
    ----------
    head : {"binary", "multiclass", "regression"}
    logits : ndarray of shape (n, C)
    target : ndarray of shape (n,)

    Returns
    -------
    value : float
    grad : ndarray of shape (n, C)
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target)
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise ContractError(f"logits {z.shape} and targets {y.shape} do not match")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite prediction")
    n = z.shape[0]
    if head == "binary":
        s = z[:, 0]
        yf = y.astype(np.float64)
        value = np.mean(np.logaddexp(0.0, s) - yf * s)
        p = np.exp(-np.logaddexp(0.0, -s))
        grad = ((p - yf) / n)[:, None]
    elif head == "multiclass":
        yi = y.astype(np.int64)
        lse = np.logaddexp.reduce(z, axis=1)
        value = np.mean(lse - z[np.arange(n), yi])
        grad = np.exp(z - lse[:, None])
        grad[np.arange(n), yi] -= 1.0
        grad /= n
    elif head == "regression":
        r = z[:, 0] - y.astype(np.float64)
        if regression_loss == "l1":
            value = np.mean(np.abs(r))
            grad = (np.sign(r) / n)[:, None]
        else:
            value = np.mean(r * r)
            grad = (2.0 * r / n)[:, None]
    else:
        raise ContractError(f"unknown head {head!r}")
    return float(value), grad


# --------------------------------------------------------------------------
# metrics


def roc_auc(y_true, scores) -> float:
    """Rank-based (Mann-Whitney U) area under the ROC curve; ties count one half."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC is undefined when only one class is present")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class Metrics:
    loss: Optional[float] = None
    accuracy: Optional[float] = None
    roc_auc: Optional[float] = None
    mae: Optional[float] = None
    n_samples: int = 0
    notes: Dict[str, str] = field(default_factory=dict)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def score(self, head: str) -> float:
        """Selection score, larger is better."""
        return -self.mae if head == "regression" else self.accuracy


def metrics_from_logits(model: GnanModel, logits, y, regression_loss="l1") -> Metrics:
    y = np.asarray(y)
    if len(y) == 0:
        return Metrics(notes={"empty": "no samples"})
    value, _ = loss(model.head, logits, y, regression_loss)
    m = Metrics(loss=value, n_samples=len(y))
    pred = model.activate(logits)
    if model.head == "regression":
        m.mae = float(np.mean(np.abs(pred - y.astype(np.float64))))
    elif model.head == "binary":
        m.accuracy = float(np.mean((pred > 0.5).astype(np.int64) == y.astype(np.int64)))
        try:
            m.roc_auc = roc_auc(y, pred)
        except UndefinedMetricError as exc:
            m.notes["roc_auc"] = str(exc)
    else:
        m.accuracy = float(np.mean(np.argmax(pred, axis=1) == y.astype(np.int64)))
    return m


def evaluate(model: GnanModel, data: TaskData, split: Optional[str] = None, regression_loss: str = "l1") -> Metrics:
    """Task-appropriate metrics of ``model`` on ``data``.

    ``split`` is informational for graph tasks; for node tasks a split name
    re-selects the anchors from the graphs' masks.
    """
    if split is not None and data.level == "node":
        data = TaskData.for_nodes(data.graphs, split=split, profiles=data.profiles)
    if len(data) == 0:
        return Metrics(notes={"empty": f"split {split!r} has no samples"})
    logits, _ = data.plan(model).forward(model)
    return metrics_from_logits(model, logits, data.y, regression_loss)


def predict_logits(model: GnanModel, data: TaskData) -> np.ndarray:
    if len(data) == 0:
        return np.zeros((0, model.output_dim))
    return data.plan(model).forward(model)[0]


# --------------------------------------------------------------------------
# fitting


def task_name(level: str, head: str) -> str:
    return f"{level}-{head}"


def build_model(n_features: int, task: str, cfg: TrainConfig, n_classes: Optional[int] = None) -> GnanModel:
    """Fresh model initialized from the ``init`` stream of ``cfg.seed``."""
    return GnanModel(n_features, task, n_classes=n_classes, hidden_layers=cfg.hidden_layers,
                     hidden_width=cfg.hidden_width, dropout=cfg.dropout,
                     normalize_by_count=cfg.normalize_by_count, per_feature_distance=cfg.per_feature_distance,
                     rng=seed_stream(cfg.seed, "init"), init=cfg.init, dtype=cfg.dtype)


def _check_targets(model, data):
    if data.level != model.level:
        raise ConfigError(f"{data.level}-level data given to a {model.task} model")
    if model.head != "regression":
        y = data.y
        if y.dtype.kind not in "iub" or (len(y) and (y.min() < 0 or y.max() >= max(model.n_classes, 2))):
            raise ConfigError(f"classification targets must be integers in 0..{model.n_classes - 1}")


def fit(model: GnanModel, train: TaskData, cfg: TrainConfig, val: Optional[TaskData] = None):
    """Train ``model`` in place with Adam and return ``(model, history)``.

    Node tasks take one full-batch step per epoch; graph tasks shuffle and
    take mini-batches of ``cfg.batch_size`` graphs.  ``history`` is a
    :class:`Metrics` whose ``train_loss``/``val_loss`` hold per-epoch values
    and whose scalar fields describe the returned model on ``val`` (or on
    ``train`` when no validation data is given).
    """
    cfg.validate()
    if len(train) == 0:
        raise ConfigError("training split is empty")
    _check_targets(model, train)
    dropout_rng = seed_stream(cfg.seed, "dropout")
    shuffle_rng = seed_stream(cfg.seed, "shuffle")
    params = model.parameters()
    state = AdamState.for_params(params, cfg.learning_rate, cfg.weight_decay)
    train_loss, val_loss = [], []

    n = len(train)
    fixed_plan = train.plan(model) if (train.level == "node" or cfg.batch_size >= n) else None
    val_plan = val.plan(model) if val is not None and len(val) else None

    best = None  # (key, epoch, params)
    since_best = 0
    patience = cfg.early_stopping_patience
    for epoch in range(cfg.epochs):
        if fixed_plan is not None:
            batches = [(fixed_plan, train.y)]
        else:
            order = shuffle_rng.permutation(n)
            batches = [(train.plan(model, rows), train.y[rows])
                       for rows in (order[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size))]
        total = 0.0
        for plan, y in batches:
            logits, cache = plan.forward(model, train=True, rng=dropout_rng)
            value, dlogits = loss(model.head, logits, y, cfg.regression_loss)
            grads = plan.backward(model, cache, dlogits)
            adam_step(params, grads, state)
            total += value * len(y)
        train_loss.append(total / n)

        if val_plan is not None:
            vlogits, _ = val_plan.forward(model)
            vm = metrics_from_logits(model, vlogits, val.y, cfg.regression_loss)
            val_loss.append(vm.loss)
            if patience is not None:
                if cfg.early_stopping_metric == "accuracy" and vm.accuracy is not None:
                    key = (-vm.accuracy, vm.loss)
                else:
                    key = (vm.loss,)
                if best is None or key < best[0]:
                    best = (key, epoch, [p.copy() for p in params])
                    since_best = 0
                else:
                    since_best += 1
                    if since_best >= patience:
                        logger.debug("early stop at epoch %d (best %d)", epoch, best[1])
                        break

    if patience is not None and best is not None:
        model.set_parameters(best[2])
    ref = val if val_plan is not None else train
    history = evaluate(model, ref, regression_loss=cfg.regression_loss)
    history.train_loss = train_loss
    history.val_loss = val_loss
    if best is not None:
        history.notes["best_epoch"] = str(best[1])
    return model, history


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    metric: str
    folds: List[dict]
    mean: float
    std: float

    def to_dict(self) -> dict:
        return asdict(self)


def _is_classification(y):
    return np.asarray(y).dtype.kind in "iub"


def cross_validate(data: TaskData, task: str, base_cfg: TrainConfig, grid: Optional[Dict[str, Sequence]] = None,
                   folds: int = 10, seeds: Sequence[int] = (0,), val_fraction: float = 0.1,
                   n_classes: Optional[int] = None, n_features: Optional[int] = None) -> CVResult:
    """Nested K-fold cross-validation.

    For every seed and outer fold, a validation slice of the training fold
    selects the best configuration from ``grid`` (accuracy, or MAE for
    regression; ties broken by validation loss).  The selected model is
    scored on the outer test fold.
    """
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    if folds > len(data):
        raise ConfigError(f"folds={folds} exceeds the dataset size {len(data)}")
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie in (0, 1)")
    head = task.split("-")[1]
    d = n_features if n_features is not None else data.graphs[0].n_features
    configs = expand_grid(grid)
    metric = "mae" if head == "regression" else "accuracy"
    records = []
    y = data.y
    for seed in seeds:
        splits = outer_folds(y, folds, seed, classification=head != "regression")
        for fold, (tr, te) in enumerate(splits):
            strat = y[tr] if head != "regression" and _min_class_count(y[tr]) >= 2 else None
            tr_in, va = train_test_split(tr, test_size=val_fraction, random_state=seed, stratify=strat)
            best = None
            for params in configs:
                cfg = replace(base_cfg, seed=seed, **params).validate()
                model = build_model(d, task, cfg, n_classes)
                fit(model, data.subset(tr_in), cfg)
                vm = evaluate(model, data.subset(va), regression_loss=cfg.regression_loss)
                key = (vm.score(head), -vm.loss)
                if best is None or key > best[0]:
                    best = (key, params, model, vm, cfg)
            _, params, model, vm, cfg = best
            tm = evaluate(model, data.subset(te), regression_loss=cfg.regression_loss)
            records.append({
                "seed": int(seed), "fold": fold, "params": params,
                "n_train": len(tr_in), "n_val": len(va), "n_test": len(te),
                "test_index": [int(i) for i in te],
                "val": {"loss": vm.loss, metric: getattr(vm, metric)},
                "test": {"loss": tm.loss, metric: getattr(tm, metric), "roc_auc": tm.roc_auc},
            })
            logger.info("seed %s fold %d: test %s=%.4f params=%s", seed, fold, metric, getattr(tm, metric), params)
    values = np.asarray([r["test"][metric] for r in records], dtype=np.float64)
    return CVResult(metric=metric, folds=records, mean=float(values.mean()), std=float(values.std()))


def split_protocol(graph: GraphInstance, splits: Sequence[dict], task: str, base_cfg: TrainConfig,
                   grid: Optional[Dict[str, Sequence]] = None, n_classes: Optional[int] = None,
                   max_distance: Optional[int] = None) -> CVResult:
    """Node-level evaluation over predefined train/val/test masks.

    For each split every configuration in ``grid`` is trained on the
    ``train`` mask and the one with the best validation score is scored on
    the ``test`` mask.  ``graph.node_labels`` must already be encoded.
    """
    if not splits:
        raise ConfigError("split_protocol needs at least one split")
    head = task.split("-")[1]
    metric = "mae" if head == "regression" else "accuracy"
    profiles = compute_profiles([graph], max_distance)
    configs = expand_grid(grid)
    records = []
    for si, masks in enumerate(splits):
        g = GraphInstance(features=graph.features, edges=graph.edges, node_labels=graph.node_labels,
                          masks=masks, positions=graph.positions)
        parts = {name: TaskData.for_nodes([g], split=name, profiles=profiles) for name in ("train", "val", "test")}
        best = None
        for params in configs:
            cfg = replace(base_cfg, **params).validate()
            model = build_model(graph.n_features, task, cfg, n_classes)
            fit(model, parts["train"], cfg)
            vm = evaluate(model, parts["val"], regression_loss=cfg.regression_loss)
            key = (vm.score(head), -vm.loss)
            if best is None or key > best[0]:
                best = (key, params, model, vm, cfg)
        _, params, model, vm, cfg = best
        tm = evaluate(model, parts["test"], regression_loss=cfg.regression_loss)
        records.append({"split": si, "params": params, "val": {"loss": vm.loss, metric: getattr(vm, metric)},
                        "test": {"loss": tm.loss, metric: getattr(tm, metric)}})
        logger.info("split %d: test %s=%.4f params=%s", si, metric, getattr(tm, metric), params)
    values = np.asarray([r["test"][metric] for r in records], dtype=np.float64)
    return CVResult(metric=metric, folds=records, mean=float(values.mean()), std=float(values.std()))


def _min_class_count(y):
    _, cnt = np.unique(y, return_counts=True)
    return int(cnt.min())


def outer_folds(y, folds: int, seed: int, classification: bool = True):
    """Shuffled (stratified when possible) outer folds as ``(train, test)`` index pairs."""
    y = np.asarray(y)
    idx = np.arange(len(y))
    if classification and _min_class_count(y) >= folds:
        splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
        return list(splitter.split(idx, y))
    return list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(idx))
