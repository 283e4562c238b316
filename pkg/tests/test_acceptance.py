"""Acceptance suite.

Every criterion prints one ``PASS``/``FAIL`` line (also repeated in the
terminal summary) and then asserts.  Tolerances and sizes are the stated
ones; deviations forced by runtime are noted next to the parameter.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from conftest import random_graph, random_model
from gnan import export
from gnan.cli import main
from gnan.datasets import (SyntheticConfig, generate_synthetic, parse_dataset, read_geom_gcn, read_tudataset,
                           write_dataset)
from gnan.estimator import encode_labels
from gnan.explain import (bootstrap_bands, distance_curves, heatmap, node_contributions, node_feature_influences,
                          record_feature_stats, sample_shape_curves)
from gnan.graph import GraphInstance, all_pairs_distances
from gnan.model import (AggregationPlan, graph_buckets, graph_logit, graph_representation, load_model,
                        node_logits, node_representations_naive, node_representations_tensor, save_model, softmax)
from gnan.training import (PAPER_GRID, TaskData, TrainConfig, build_model, cross_validate, evaluate, fit, loss,
                           split_protocol)


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line)
    conftest.ACCEPTANCE.append(line)
    return ok


# --------------------------------------------------------------------------
# 1. tensor / naive equivalence


def test_criterion_1_tensor_matches_naive():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    modes = [(C, norm, per) for C in (1, 3, 4) for norm in (True, False) for per in (False, True)]
    for i in range(200):
        C, norm, per = modes[i % len(modes)]
        n = int(rng.integers(1, 51))
        d = int(rng.integers(1, 9))
        g = random_graph(rng, n=n, d=d, p=float(rng.uniform(0.02, 0.4)), binary=bool(i % 5 == 0))
        task = "graph-binary" if C == 1 else "graph-multiclass"
        m = random_model(rng, d, task, C if C > 1 else None, normalize=norm, per_feature=per)
        prof = all_pairs_distances(g)
        a = node_representations_naive(m, g, prof)
        b = node_representations_tensor(m, g, prof)
        assert a.shape == b.shape == (n, d, C)
        worst = max(worst, float(np.max(np.abs(a - b))))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-10 and secs < 60
    assert report(1, ok, f"200 instances, max |naive - tensor| = {worst:.3e} (<= 1e-10), {secs:.1f}s (< 60s)")


# --------------------------------------------------------------------------
# 2. gradient correctness


def _fd_errors(model, plan, y, head, eps=1e-5):
    logits, cache = plan.forward(model)
    _, dl = loss(head, logits, y, "mse")
    grads = plan.backward(model, cache, dl)
    worst = 0.0
    for p, g in zip(model.parameters(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss(head, plan.forward(model)[0], y, "mse")[0]
            p[idx] = old - eps
            down = loss(head, plan.forward(model)[0], y, "mse")[0]
            p[idx] = old
            num = (up - down) / (2 * eps)
            # floor keeps exactly-zero (dead unit) gradients from dividing by zero
            worst = max(worst, abs(g[idx] - num) / max(abs(g[idx]) + abs(num), 1e-6))
    return worst


def test_criterion_2_gradients():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    tasks = [("graph-binary", None), ("graph-multiclass", 3), ("graph-regression", None),
             ("node-binary", None), ("node-multiclass", 4)]
    worst, n_params = 0.0, 0
    for i in range(25):
        task, C = tasks[i % len(tasks)]
        m = random_model(rng, 3, task, C, normalize=bool(i % 2), per_feature=bool((i // 2) % 2), layers=2, width=4)
        g = random_graph(rng, n=int(rng.integers(2, 8)), d=3, p=0.4)
        prof = all_pairs_distances(g)
        head = task.split("-")[1]
        if task.startswith("graph"):
            plan = AggregationPlan.for_graphs([g], graph_buckets([prof], m.normalize_by_count))
            n_out = 1
        else:
            anchors = [(0, j) for j in range(g.node_count)]
            plan = AggregationPlan.for_nodes([g], [prof], anchors, m.normalize_by_count)
            n_out = len(anchors)
        y = rng.normal(size=n_out) if head == "regression" else rng.integers(0, C or 2, size=n_out)
        worst = max(worst, _fd_errors(m, plan, y, head))
        n_params += sum(p.size for p in m.parameters())
    secs = time.perf_counter() - t0
    ok = worst <= 1e-4 and secs < 120
    assert report(2, ok, f"25 graphs, {n_params} parameter gradients, max relative error {worst:.3e} (<= 1e-4), "
                         f"{secs:.1f}s (< 120s)")


# --------------------------------------------------------------------------
# 3. decomposition identities


def test_criterion_3_identities():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst_c = worst_i = 0.0
    for i in range(100):
        C = (1, 3, 4)[i % 3]
        task = "graph-binary" if C == 1 else "graph-multiclass"
        d = int(rng.integers(1, 6))
        m = random_model(rng, d, task, C if C > 1 else None, normalize=bool(i % 2), per_feature=bool((i // 2) % 2))
        g = random_graph(rng, d=d, n_max=30)
        prof = all_pairs_distances(g)
        h = graph_representation(m, g, prof)  # (d, C)
        contrib = node_contributions(m, g, prof)  # (N, C)
        infl = node_feature_influences(m, g, prof)  # (N, d, C)
        worst_c = max(worst_c, float(np.max(np.abs(contrib.sum(axis=0) - h.sum(axis=0)))))
        worst_i = max(worst_i, float(np.max(np.abs(infl.sum(axis=0) - h))))
    secs = time.perf_counter() - t0
    ok = max(worst_c, worst_i) <= 1e-10 and secs < 30
    assert report(3, ok, f"100 graphs, contributions {worst_c:.3e}, influences {worst_i:.3e} (<= 1e-10), "
                         f"{secs:.1f}s (< 30s)")


# --------------------------------------------------------------------------
# 4. permutation invariance / equivariance


def test_criterion_4_permutations():
    rng = np.random.default_rng(4)
    worst_g = worst_n = 0.0
    for i in range(50):
        d = int(rng.integers(1, 5))
        C = (1, 3)[i % 2]
        gm = random_model(rng, d, "graph-binary" if C == 1 else "graph-multiclass", C if C > 1 else None,
                          normalize=bool(i % 3), per_feature=bool(i % 4 == 0))
        nm = random_model(rng, d, "node-binary" if C == 1 else "node-multiclass", C if C > 1 else None,
                          normalize=bool(i % 3), per_feature=bool(i % 4 == 0))
        g = random_graph(rng, d=d, n_max=20)
        prof = all_pairs_distances(g)
        gp = gm.activate(graph_logit(gm, g, prof))
        np_ = nm.activate(node_logits(nm, g, prof))
        for _ in range(5):
            perm = rng.permutation(g.node_count)
            h = g.permute(perm)
            hp = all_pairs_distances(h)
            plan = AggregationPlan.for_graphs([h], graph_buckets([hp], gm.normalize_by_count))
            worst_g = max(worst_g, float(np.max(np.abs(gm.activate(graph_logit(gm, h, hp)) - gp))),
                          float(np.max(np.abs(gm.activate(plan.forward(gm)[0][0]) - gp))))
            worst_n = max(worst_n, float(np.max(np.abs(nm.activate(node_logits(nm, h, hp)) - np_[perm]))))
    ok = max(worst_g, worst_n) <= 1e-10
    assert report(4, ok, f"50 graphs x 5 permutations, graph drift {worst_g:.3e}, node drift {worst_n:.3e} "
                         f"(<= 1e-10)")


# --------------------------------------------------------------------------
# 5. synthetic learnability


@pytest.mark.slow
def test_criterion_5_synthetic_learnability():
    t0 = time.perf_counter()
    gs = generate_synthetic(SyntheticConfig(n_graphs=200, n_features=2, shape_functions=("sin", "linear"),
                                            distance_kernel="exp", seed=0))
    data = TaskData.for_graphs(gs)
    # 300 epochs instead of the 1000-epoch default so the 32-config grid fits the runtime budget
    res = cross_validate(data, "graph-binary", TrainConfig(epochs=300), grid=PAPER_GRID, folds=2, seeds=(0,))
    secs = time.perf_counter() - t0
    ok = res.mean >= 0.90 and secs < 600
    assert report(5, ok, f"200 graphs, full grid, 2-fold test accuracy {res.mean:.3f} (>= 0.90), "
                         f"{secs:.0f}s (< 600s)")


# --------------------------------------------------------------------------
# 6. small-dataset reproduction


def _ptc_graphs(root):
    root = Path(root)
    if (root / "PTC_MR_A.txt").exists():
        return read_tudataset(root, "PTC_MR")
    return parse_dataset(root, "flat-csv")


@pytest.mark.slow
def test_criterion_6_ptc_and_cornell():
    ptc_dir, cornell_dir = os.environ.get("GNAN_PTC_DIR"), os.environ.get("GNAN_CORNELL_DIR")
    if not ptc_dir or not cornell_dir:
        report(6, False, "PTC / Cornell data not available (set GNAN_PTC_DIR and GNAN_CORNELL_DIR); not run")
        pytest.xfail("benchmark data unavailable offline")
    t0 = time.perf_counter()
    graphs = _ptc_graphs(ptc_dir)
    y, _ = encode_labels([g.graph_label for g in graphs])
    data = TaskData.for_graphs(graphs, y=y)
    ptc = cross_validate(data, "graph-binary", TrainConfig(), grid=PAPER_GRID, folds=10, seeds=(0,))
    g, splits = read_geom_gcn(cornell_dir, "cornell")
    labels, classes = encode_labels(g.node_labels)
    g.node_labels = labels
    cornell = split_protocol(g, splits, "node-multiclass", TrainConfig(), grid=PAPER_GRID,
                             n_classes=len(classes))
    secs = time.perf_counter() - t0
    p, c = 100 * ptc.mean, 100 * cornell.mean
    ok = abs(p - 64.9) <= 8 and abs(c - 85.7) <= 10 and secs < 3600
    assert report(6, ok, f"PTC {p:.1f} (64.9 +/- 8), Cornell {c:.1f} (85.7 +/- 10), {secs:.0f}s (< 3600s)")


# --------------------------------------------------------------------------
# 7. bootstrap bands


@pytest.mark.slow
def test_criterion_7_bootstrap_bands():
    t0 = time.perf_counter()
    gs = generate_synthetic(SyntheticConfig(n_graphs=100, n_features=2, shape_functions=("sin", "linear"), seed=0))
    data = TaskData.for_graphs(gs)
    cfg = TrainConfig(learning_rate=1e-2, hidden_layers=3, hidden_width=32)
    res = bootstrap_bands(data, "graph-binary", cfg, resamples=200, reduced_epochs=50)
    inside = total = 0
    for c in res.curves:
        hit = (c.lower <= c.values) & (c.values <= c.upper)
        inside += int(hit.sum())
        total += hit.size
    frac = inside / total

    X = np.array([[0.2, 1.0], [0.7, 0.0], [0.4, 1.0]])
    same = [GraphInstance(features=X, edges=[(0, 1), (1, 2)], graph_label=1) for _ in range(10)]
    deg = bootstrap_bands(TaskData.for_graphs(same), "graph-binary",
                          TrainConfig(epochs=5, hidden_layers=2, hidden_width=8), resamples=20)
    zero = all(np.array_equal(c.lower, c.upper) and np.array_equal(c.lower, c.values) for c in deg.curves)
    secs = time.perf_counter() - t0
    ok = frac >= 0.90 and zero and secs < 900
    assert report(7, ok, f"200 resamples x {res.metadata['epochs']} epochs, {100 * frac:.1f}% of points inside (>= 90%), "
                         f"degenerate bands zero-width: {zero}, {secs:.0f}s (< 900s)")


# --------------------------------------------------------------------------
# 8. multiclass head


def test_criterion_8_multiclass_head():
    rng = np.random.default_rng(8)
    worst = 0.0
    for i in range(50):
        C = int(rng.integers(2, 6))
        d = int(rng.integers(1, 5))
        m = random_model(rng, d, ("graph-multiclass", "node-multiclass")[i % 2], C)
        g = random_graph(rng, d=d, n_max=15)
        prof = all_pairs_distances(g)
        p = m.activate(graph_logit(m, g, prof) if m.level == "graph" else node_logits(m, g, prof))
        worst = max(worst, float(np.max(np.abs(np.sum(p, axis=-1) - 1))))
    worst = max(worst, float(np.max(np.abs(softmax(np.array([[1e3, -1e3, 0.0]])).sum() - 1))))

    gs = generate_synthetic(SyntheticConfig(n_graphs=8, n_nodes=(20, 30), n_features=3, level="node",
                                            target="multiclass", n_classes=3, seed=0))
    train = TaskData.for_nodes(gs, "train")
    cfg = TrainConfig(epochs=500, learning_rate=1e-2, hidden_width=32)
    model, _ = fit(build_model(3, "node-multiclass", cfg, n_classes=3), train, cfg)
    acc = evaluate(model, train).accuracy
    # the trained model's softmax outputs count as a test too
    probs = model.activate(np.concatenate([node_logits(model, g, all_pairs_distances(g)) for g in gs]))
    worst = max(worst, float(np.max(np.abs(probs.sum(axis=1) - 1))))
    ok = worst <= 1e-9 and acc >= 0.95
    assert report(8, ok, f"softmax sum drift {worst:.3e} (<= 1e-9), 3-class node train accuracy {acc:.3f} "
                         f"(>= 0.95)")


# --------------------------------------------------------------------------
# 9. serialization and CLI round-trips


def _model_drift(tmp_path, rng):
    worst = 0.0
    for i, (task, C) in enumerate([("graph-binary", None), ("graph-multiclass", 3), ("graph-regression", None),
                                   ("node-binary", None), ("node-multiclass", 4)]):
        m = random_model(rng, 3, task, C, per_feature=bool(i % 2))
        save_model(m, tmp_path / f"m{i}.json")
        back = load_model(tmp_path / f"m{i}.json")
        for _ in range(10):
            g = random_graph(rng, d=3)
            prof = all_pairs_distances(g)
            f = graph_logit if m.level == "graph" else node_logits
            worst = max(worst, float(np.max(np.abs(m.activate(f(m, g, prof)) - back.activate(f(back, g, prof))))))
    return worst


def _csv_exact(tmp_path, rng):
    m = random_model(rng, 3, "graph-multiclass", 3, per_feature=True)
    X = rng.random((40, 3))
    X[:, 2] = X[:, 2] > 0.5
    record_feature_stats(m, X)
    curves = sample_shape_curves(m, n_points=25) + distance_curves(m, 4)
    export.write_curves_csv(curves, tmp_path / "c.csv")
    rows = iter(export.read_curves_csv(tmp_path / "c.csv"))
    ok = True
    for c in curves:
        for gi, x in enumerate(c.grid):
            for cls in range(3):
                r = next(rows)
                ok &= r["input"] == x and r["value"] == c.values[gi, cls]
    maps = [heatmap(m, k, 4, n_points=10) for k in range(3)]
    export.write_heatmap_csv(maps, tmp_path / "h.csv")
    flat = [v for hm in maps for v in hm.cells.ravel()]
    ok &= [r["value"] for r in export.read_heatmap_csv(tmp_path / "h.csv")] == flat
    g = random_graph(rng, n=10, d=3)
    contrib = node_contributions(m, g, all_pairs_distances(g))
    export.write_contributions_csv(contrib, tmp_path / "n.csv")
    ok &= [r["contribution"] for r in export.read_contributions_csv(tmp_path / "n.csv")] == contrib.ravel().tolist()
    return ok


def _runs_identical(tmp_path):
    gs = generate_synthetic(SyntheticConfig(n_graphs=30, n_features=2, seed=9))
    write_dataset(gs, tmp_path / "d.json")
    for run in ("a", "b"):
        base = ["--data", str(tmp_path / "d.json"), "--seed", "3", "--threads", "1"]
        assert main(["train", *base, "--epochs", "5", "--out", str(tmp_path / run / "train")]) == 0
        assert main(["explain", *base, "--model", str(tmp_path / run / "train" / "model.json"), "--curves",
                     "--heatmap", "0", "--local", "0,1,2", "--bootstrap", "3", "--epochs", "2", "--svg",
                     "--out", str(tmp_path / run / "explain")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    return same, len(files)


def test_criterion_9_round_trips(tmp_path):
    rng = np.random.default_rng(9)
    drift = _model_drift(tmp_path, rng)
    exact = _csv_exact(tmp_path, rng)
    same, n_files = _runs_identical(tmp_path)
    ok = drift <= 1e-12 and exact and same
    assert report(9, ok, f"save/load drift {drift:.3e} (<= 1e-12), CSV re-parse exact: {exact}, "
                         f"{n_files} CLI outputs byte-identical across runs: {same}")
