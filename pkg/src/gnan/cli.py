"""Command-line entry point: ``gnan {train,predict,explain,crossval,synth}``.

Every command accepts ``--config`` (a YAML file) whose values are
overridden by explicit flags.  Failures print a JSON error record on stderr
and exit with 1 (usage/config), 2 (data/schema) or 3 (numeric).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import explain as ex
from . import export
from .datasets import FORMATS, SyntheticConfig, generate_synthetic, guess_format, parse_dataset, write_dataset
from .estimator import all_nodes, encode_labels, infer_head, max_finite_distance
from .exceptions import ConfigError, DataError, GnanError, NumericError, SchemaError
from .graph import compute_profiles
from .model import load_model, save_model
from .training import (PAPER_GRID, TaskData, TrainConfig, build_model, cross_validate, evaluate, fit,
                       predict_logits, task_name)

logger = logging.getLogger("gnan")

CONFIG_SECTIONS = {"task", "level", "data", "format", "train", "synthetic", "crossval", "explain"}
COMMANDS = ("train", "predict", "explain", "crossval", "synth")


# --------------------------------------------------------------------------
# plumbing


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@contextmanager
def output_dir(path):
    """Yield a scratch directory whose files are moved into ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
        if not path.exists():
            os.replace(tmp, path)
            return
        for item in sorted(tmp.iterdir()):
            os.replace(item, path / item.name)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    unknown = set(cfg) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _train_config(args, conf) -> TrainConfig:
    d = dict(conf.get("train") or {})
    if args.seed is not None:
        d["seed"] = args.seed
    if args.precision is not None:
        d["precision"] = args.precision
    if getattr(args, "epochs", None) is not None:
        d["epochs"] = args.epochs
    return TrainConfig.from_dict(d)


def _load_graphs(args, conf, required=True):
    path = args.data or conf.get("data")
    if path is None:
        if required:
            raise ConfigError("--data is required")
        return None
    if not Path(path).exists():
        raise DataError(f"dataset not found: {path}")
    fmt = args.format or conf.get("format") or guess_format(path)
    return parse_dataset(path, fmt)


def _level(args, conf) -> str:
    level = getattr(args, "level", None) or conf.get("level") or "graph"
    if level not in ("graph", "node"):
        raise ConfigError(f"level must be 'graph' or 'node', got {level!r}")
    return level


def _labels(graphs, level, data: TaskData):
    if any(v is None for v in data.y.tolist()):
        raise SchemaError(f"some {level} samples have no label")
    return data.y


def _threads(args) -> int:
    t = args.threads if args.threads is not None else 1
    if t < 1:
        raise ConfigError("--threads must be >= 1")
    return t


def _task_and_targets(args, conf, level, train: TaskData):
    """Resolve the task and encode classification targets in place."""
    y = _labels(train.graphs, level, train)
    task = getattr(args, "task", None) or conf.get("task")
    head = task.split("-")[1] if task else infer_head(y)
    if task and task.split("-")[0] != level:
        raise ConfigError(f"task {task!r} does not match level {level!r}")
    classes = None
    if head != "regression":
        enc, classes = encode_labels(y)
        train.y = enc
        if head == "binary" and len(classes) > 2:
            raise ConfigError(f"binary task but {len(classes)} classes present")
        if head == "multiclass" and len(classes) < 3:
            head = "binary" if task is None else head
    else:
        train.y = np.asarray(y, dtype=np.float64)
    return task_name(level, head), classes


def _split_data(graphs, profiles, level, split):
    if level == "graph":
        return TaskData.for_graphs(graphs, profiles=profiles)
    return TaskData.for_nodes(graphs, split=split, profiles=profiles)


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    conf = load_config(args.config)
    cfg = _train_config(args, conf)
    graphs = _load_graphs(args, conf)
    level = _level(args, conf)
    profiles = compute_profiles(graphs, args.max_distance, _threads(args))
    train = _split_data(graphs, profiles, level, "train")
    task, classes = _task_and_targets(args, conf, level, train)
    model = build_model(graphs[0].n_features, task, cfg, len(classes) if task.endswith("multiclass") else None)
    ex.record_feature_stats(model, np.concatenate([g.features for g in graphs], axis=0))
    model.metadata.update({"max_distance": max_finite_distance(profiles), "config_hash": cfg.hash(),
                           "classes": None if classes is None else classes.tolist()})
    val = None
    if level == "node":
        val = TaskData.for_nodes(graphs, split="val", profiles=profiles)
        val = _encoded(val, classes, model) if len(val) else None
    _, history = fit(model, train, cfg, val=val)

    out = Path(args.out or "gnan-run")
    with output_dir(out) as tmp:
        model_path = Path(args.model) if args.model else out / "model.json"
        save_model(model, tmp / "model.json")
        splits = {"train": evaluate(model, train, regression_loss=cfg.regression_loss).to_dict()}
        if level == "node":
            for name in ("val", "test"):
                part = TaskData.for_nodes(graphs, split=name, profiles=profiles)
                if len(part):
                    splits[name] = evaluate(model, _encoded(part, classes, model),
                                            regression_loss=cfg.regression_loss).to_dict()
        for m in splits.values():
            m.pop("train_loss", None)
            m.pop("val_loss", None)
        _dump_json({"command": "train", "task": task, "config": cfg.to_dict(), "config_hash": cfg.hash(),
                    "data": str(args.data or conf.get("data")), "metrics": splits,
                    "history": {"train_loss": history.train_loss, "val_loss": history.val_loss}},
                   tmp / "results.json")
    if args.model:
        model_path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(out / "model.json", model_path)
    print(f"model: {model_path}")
    return 0


def _encoded(data: TaskData, classes, model) -> TaskData:
    if model.head != "regression":
        data.y, _ = encode_labels(data.y, classes)
    else:
        data.y = np.asarray(data.y, dtype=np.float64)
    return data


def _require_model(args):
    if not args.model:
        raise ConfigError("--model is required")
    if not Path(args.model).exists():
        raise DataError(f"model file not found: {args.model}")
    try:
        return load_model(args.model)
    except (ValueError, KeyError) as exc:
        raise DataError(f"cannot load model {args.model}: {exc}") from None


def _check_dims(model, graphs):
    d = graphs[0].n_features
    if d != model.n_features:
        raise SchemaError(f"dataset has d={d} features but the model was trained with d={model.n_features}")


def cmd_predict(args) -> int:
    conf = load_config(args.config)
    model = _require_model(args)
    graphs = _load_graphs(args, conf)
    _check_dims(model, graphs)
    profiles = compute_profiles(graphs, args.max_distance, _threads(args))
    if model.level == "graph":
        ids = [[str(i)] for i in range(len(graphs))]
        data = TaskData(graphs, profiles, "graph", np.arange(len(graphs)), np.zeros(len(graphs)))
        id_cols = ["graph"]
    else:
        anchors = all_nodes(graphs)
        ids = [[str(gi), str(i)] for gi, i in anchors]
        data = TaskData(graphs, profiles, "node", anchors, np.zeros(len(anchors)))
        id_cols = ["graph", "node"]
    scores = model.activate(predict_logits(model, data))
    classes = model.metadata.get("classes")
    if model.head == "binary":
        scores = np.column_stack([1.0 - scores, scores])
    elif model.head == "regression":
        scores = scores[:, None]
    if model.head == "regression":
        cols, labels = ["prediction"], [export.fmt(v) for v in scores[:, 0]]
        header = id_cols + cols
        rows = [i + [lab] for i, lab in zip(ids, labels)]
    else:
        pred = np.argmax(scores, axis=1)
        names = classes if classes is not None else list(range(scores.shape[1]))
        header = id_cols + [f"score_{c}" for c in range(scores.shape[1])] + ["label"]
        rows = [i + [export.fmt(v) for v in s] + [str(names[p])] for i, s, p in zip(ids, scores, pred)]
    out = Path(args.out or "predictions.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")
    print(f"predictions: {out}")
    return 0


def _parse_ids(text) -> list:
    try:
        return [int(t) for t in str(text).split(",") if t.strip() != ""]
    except ValueError:
        raise ConfigError(f"--local expects comma-separated node ids, got {text!r}") from None


def cmd_explain(args) -> int:
    conf = load_config(args.config)
    model = _require_model(args)
    graphs = _load_graphs(args, conf, required=False)
    if graphs is not None:
        _check_dims(model, graphs)
    if args.bootstrap is not None and graphs is None:
        raise ConfigError("--bootstrap needs --data to retrain on")
    if args.local is not None and graphs is None:
        raise ConfigError("--local needs --data")
    if not (args.curves or args.heatmap or args.local is not None or args.bootstrap is not None):
        args.curves = True
    L = args.max_distance if args.max_distance is not None else model.metadata.get("max_distance")
    if L is None:
        L = max_finite_distance(compute_profiles(graphs, None, _threads(args))) if graphs is not None else 0
    size = {"width": args.width, "height": args.height}
    written = []
    out = Path(args.out or "gnan-explain")
    with output_dir(out) as tmp:
        if args.curves and args.bootstrap is None:
            curves = ex.sample_shape_curves(model, n_points=args.points) + ex.distance_curves(model, L)
            export.write_curves_csv(curves, tmp / "curves.csv")
            written.append("curves.csv")
            if args.svg:
                for c in curves:
                    name = f"curve_{c.feature}.svg".replace(":", "_")
                    export.curve_svg(c, tmp / name, **size)
                    written.append(name)
        if args.heatmap:
            maps = [ex.heatmap(model, k, L, n_points=args.points) for k in args.heatmap]
            export.write_heatmap_csv(maps, tmp / "heatmap.csv")
            written.append("heatmap.csv")
            if args.svg:
                for m in maps:
                    for c in range(m.cells.shape[2]):
                        name = f"heatmap_{m.feature}_class{c}.svg"
                        export.heatmap_svg(m, tmp / name, class_index=c, **size)
                        written.append(name)
        if args.local is not None:
            g = graphs[args.graph]
            prof = compute_profiles([g], args.max_distance)[0]
            contrib = ex.node_contributions(model, g, prof)
            nodes = _parse_ids(args.local)
            for i in nodes:
                if not 0 <= i < g.node_count:
                    raise ConfigError(f"node id {i} out of range for a graph with {g.node_count} nodes")
            export.write_contributions_csv(contrib, tmp / "contributions.csv", nodes=nodes)
            drawing = ex.render_local_graph(g, contrib, class_index=args.class_index, seed=args.seed or 0)
            export.write_layout_csv(drawing, tmp / "layout.csv")
            written += ["contributions.csv", "layout.csv"]
            if args.svg:
                export.local_svg(drawing, tmp / "local.svg", **size)
                written.append("local.svg")
        if args.bootstrap is not None:
            cfg = TrainConfig.from_dict(dict(conf.get("train") or {}))
            cfg = replace(cfg, hidden_layers=model.hidden_layers, hidden_width=model.hidden_width,
                          dropout=model.dropout, normalize_by_count=model.normalize_by_count,
                          per_feature_distance=model.per_feature_distance,
                          seed=args.seed if args.seed is not None else cfg.seed)
            profiles = compute_profiles(graphs, args.max_distance, _threads(args))
            data = _split_data(graphs, profiles, model.level, "train")
            data = _encoded(data, model.metadata.get("classes"), model)
            res = ex.bootstrap_bands(data, model.task, cfg, resamples=args.bootstrap, n_points=args.points,
                                     max_distance=L, n_classes=model.n_classes if model.head == "multiclass" else None,
                                     reduced_epochs=args.epochs)
            export.write_curves_csv(res.curves, tmp / "curves.csv")
            _dump_json(res.metadata, tmp / "bootstrap.json")
            written += ["curves.csv", "bootstrap.json"]
            if args.svg:
                for c in res.curves:
                    name = f"curve_{c.feature}.svg".replace(":", "_")
                    export.curve_svg(c, tmp / name, **size)
                    written.append(name)
    for name in written:
        print(out / name)
    return 0


def cmd_crossval(args) -> int:
    conf = load_config(args.config)
    cfg = _train_config(args, conf)
    graphs = _load_graphs(args, conf)
    level = _level(args, conf)
    cv = dict(conf.get("crossval") or {})
    unknown = set(cv) - {"folds", "seeds", "grid", "val_fraction"}
    if unknown:
        raise ConfigError(f"unknown crossval keys: {sorted(unknown)}")
    folds = args.folds or cv.get("folds", 10)
    seeds = [int(s) for s in (args.seeds.split(",") if args.seeds else cv.get("seeds", [cfg.seed]))]
    grid = args.grid or cv.get("grid", "paper")
    if grid == "paper":
        grid = PAPER_GRID
    elif grid == "none":
        grid = None
    elif not isinstance(grid, dict):
        raise ConfigError("grid must be 'paper', 'none' or a mapping of parameter lists")
    profiles = compute_profiles(graphs, args.max_distance, _threads(args))
    if level == "node":
        raise ConfigError("crossval supports graph-level tasks; node tasks use the masks in the dataset")
    data = _split_data(graphs, profiles, level, "train")
    task, classes = _task_and_targets(args, conf, level, data)
    res = cross_validate(data, task, cfg, grid=grid, folds=folds, seeds=seeds,
                         val_fraction=cv.get("val_fraction", 0.1),
                         n_classes=len(classes) if task.endswith("multiclass") else None)
    out = Path(args.out or "gnan-crossval")
    with output_dir(out) as tmp:
        _dump_json({"command": "crossval", "task": task, "config": cfg.to_dict(), "config_hash": cfg.hash(),
                    "grid": grid, "folds": folds, "seeds": seeds, "result": res.to_dict()}, tmp / "results.json")
    print(f"{res.metric}: {res.mean:.4f} +- {res.std:.4f}")
    return 0


def cmd_synth(args) -> int:
    conf = load_config(args.config)
    d = dict(conf.get("synthetic") or {})
    if args.seed is not None:
        d["seed"] = args.seed
    scfg = SyntheticConfig.from_dict(d)
    graphs = generate_synthetic(scfg)
    out = Path(args.out or "synthetic.json")
    fmt = args.format or ("flat-csv" if out.suffix == "" else "edge-json")
    if fmt == "flat-csv":
        with output_dir(out) as tmp:
            write_dataset(graphs, tmp, fmt)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(graphs, out, fmt)
    print(f"dataset: {out} ({len(graphs)} graphs)")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnan", description="Graph Neural Additive Networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--data", help="dataset file (edge-json) or directory (flat-csv)")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--config", help="YAML config; flags override it")
        p.add_argument("--model", help="model JSON path")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker threads for distance profiles (1 = deterministic)")
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("--max-distance", type=int, dest="max_distance", help="truncate distances beyond this hop count")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    p = shared(sub.add_parser("train", help="train a model"))
    p.add_argument("--level", choices=("graph", "node"))
    p.add_argument("--task", help="e.g. graph-binary; inferred from the labels by default")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = shared(sub.add_parser("predict", help="score a dataset with a trained model"))
    p.set_defaults(func=cmd_predict)

    p = shared(sub.add_parser("explain", help="write explanation artifacts"))
    p.add_argument("--curves", action="store_true", help="shape and distance curves")
    p.add_argument("--heatmap", type=int, action="append", metavar="K", help="distance x feature heatmap for feature K")
    p.add_argument("--local", metavar="IDS", help="comma-separated node ids for a local explanation")
    p.add_argument("--graph", type=int, default=0, help="graph index for --local")
    p.add_argument("--class-index", type=int, default=0, dest="class_index", help="class drawn by --local --svg")
    p.add_argument("--bootstrap", type=int, metavar="N", help="N-resample confidence bands (needs --data)")
    p.add_argument("--epochs", type=int, help="reduced epoch budget per bootstrap resample")
    p.add_argument("--points", type=int, default=100, help="grid points per continuous feature")
    p.add_argument("--svg", action="store_true", help="also write SVG figures")
    p.add_argument("--width", type=float, default=4.0, help="SVG width in inches")
    p.add_argument("--height", type=float, default=3.0, help="SVG height in inches")
    p.set_defaults(func=cmd_explain)

    p = shared(sub.add_parser("crossval", help="nested cross-validation"))
    p.add_argument("--level", choices=("graph",))
    p.add_argument("--task")
    p.add_argument("--epochs", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--grid", choices=("paper", "none"))
    p.set_defaults(func=cmd_crossval)

    p = shared(sub.add_parser("synth", help="generate a synthetic dataset"))
    p.set_defaults(func=cmd_synth)
    return parser


def _error_record(exc, code) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sort_keys=True)


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GnanError as exc:
        record, code = _error_record(exc, exc.exit_code), exc.exit_code
    except ArithmeticError as exc:
        record, code = _error_record(exc, NumericError.exit_code), NumericError.exit_code
    except OSError as exc:
        record, code = _error_record(exc, DataError.exit_code), DataError.exit_code
    print(record, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
