import numpy as np
import pytest

from conftest import random_graph, random_model
from gnan.exceptions import ContractError, SchemaError
from gnan.graph import GraphInstance, all_pairs_distances
from gnan.model import (AggregationPlan, GnanModel, graph_buckets, graph_logit, load_model, node_logits,
                        node_representations_naive, node_representations_tensor, predict_graph, predict_node,
                        save_model)
from gnan.training import loss


def _rho(model, s, r=0):
    return model.distance_net.eval_one(r, s)


def _f(model, k, x):
    return model.feature_nets.eval_one(k, x)


def test_single_node_graph(rng):
    m = random_model(rng, 3)
    g = GraphInstance(features=[[0.2, -1.0, 3.0]])
    h = node_representations_tensor(m, g, all_pairs_distances(g))
    for k in range(3):
        np.testing.assert_allclose(h[0, k], _rho(m, 1.0) * _f(m, k, g.features[0, k]), rtol=1e-13)


def test_two_node_cases(rng):
    m = random_model(rng, 1)
    X = [[0.3], [-0.8]]
    for edges, s in (([(0, 1)], 0.5), ([], 0.0)):
        g = GraphInstance(features=X, edges=edges)
        h = node_representations_tensor(m, g, all_pairs_distances(g))
        want = _rho(m, 1.0) * _f(m, 0, 0.3) + _rho(m, s) * _f(m, 0, -0.8)
        np.testing.assert_allclose(h[0, 0], want, rtol=1e-13)


def test_star_normalization(rng):
    """Centre of a 4-star: three leaves share the distance-1 bucket."""
    m = random_model(rng, 1)
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    g = GraphInstance(features=X, edges=[(0, 1), (0, 2), (0, 3)])
    prof = all_pairs_distances(g)
    h = node_representations_tensor(m, g, prof)
    leaves = sum(_f(m, 0, x) for x in (1.0, 2.0, 3.0))
    np.testing.assert_allclose(h[0, 0], _rho(m, 1.0) * _f(m, 0, 0.0) + _rho(m, 0.5) * leaves / 3, rtol=1e-13)
    m.normalize_by_count = False
    h = node_representations_tensor(m, g, prof)
    np.testing.assert_allclose(h[0, 0], _rho(m, 1.0) * _f(m, 0, 0.0) + _rho(m, 0.5) * leaves, rtol=1e-13)


@pytest.mark.parametrize("C", [1, 3])
@pytest.mark.parametrize("normalize", [True, False])
@pytest.mark.parametrize("per_feature", [False, True])
def test_routes_agree(C, normalize, per_feature):
    rng = np.random.default_rng(C * 10 + normalize * 2 + per_feature)
    task = "graph-multiclass" if C > 1 else "graph-binary"
    for _ in range(5):
        d = int(rng.integers(1, 5))
        m = random_model(rng, d, task, C if C > 1 else None, normalize, per_feature)
        g = random_graph(rng, d=d)
        prof = all_pairs_distances(g)
        a = node_representations_naive(m, g, prof)
        b = node_representations_tensor(m, g, prof)
        assert np.max(np.abs(a - b)) <= 1e-12
        plan = AggregationPlan.for_graphs([g], graph_buckets([prof], normalize))
        np.testing.assert_allclose(plan.forward(m)[0][0], b.sum(axis=(0, 1)), rtol=1e-12, atol=1e-12)
        anchors = [(0, i) for i in range(g.node_count)]
        nplan = AggregationPlan.for_nodes([g], [prof], anchors, normalize)
        np.testing.assert_allclose(nplan.forward(m)[0], b.sum(axis=1), rtol=1e-12, atol=1e-12)


def test_plan_batches_many_graphs(rng):
    m = random_model(rng, 2, "graph-regression")
    graphs = [random_graph(rng, d=2) for _ in range(7)]
    profs = [all_pairs_distances(g) for g in graphs]
    plan = AggregationPlan.for_graphs(graphs, graph_buckets(profs))
    want = [graph_logit(m, g, p)[0] for g, p in zip(graphs, profs)]
    np.testing.assert_allclose(plan.forward(m)[0][:, 0], want, rtol=1e-12, atol=1e-12)


def _fd_check(model, plan, y, head, eps=1e-5):
    logits, cache = plan.forward(model)
    _, dl = loss(head, logits, y, "mse")
    grads = plan.backward(model, cache, dl)
    for p, g in zip(model.parameters(), grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up = loss(head, plan.forward(model)[0], y, "mse")[0]
            p[idx] = old - eps
            down = loss(head, plan.forward(model)[0], y, "mse")[0]
            p[idx] = old
            num[idx] = (up - down) / (2 * eps)
        err = np.abs(g - num) / np.maximum(1e-6, np.abs(g) + np.abs(num))
        assert err.max() < 1e-4


@pytest.mark.parametrize("task,C,per_feature", [("graph-binary", None, False), ("graph-multiclass", 3, False),
                                                ("graph-regression", None, True), ("node-multiclass", 3, True)])
def test_plan_gradients(task, C, per_feature, rng):
    m = random_model(rng, 2, task, C, per_feature=per_feature, layers=2, width=4)
    graphs = [random_graph(rng, d=2, n_max=6) for _ in range(3)]
    profs = [all_pairs_distances(g) for g in graphs]
    if task.startswith("graph"):
        plan = AggregationPlan.for_graphs(graphs, graph_buckets(profs))
        n = len(graphs)
    else:
        anchors = [(gi, i) for gi, g in enumerate(graphs) for i in range(g.node_count)]
        plan = AggregationPlan.for_nodes(graphs, profs, anchors)
        n = len(anchors)
    head = task.split("-")[1]
    y = rng.integers(0, C or 2, size=n) if head != "regression" else rng.normal(size=n)
    _fd_check(m, plan, y, head)


def test_permutation(rng):
    m = random_model(rng, 3, "node-multiclass", 3)
    g = random_graph(rng, n=9, d=3)
    perm = rng.permutation(9)
    h = g.permute(perm)
    a = node_logits(m, g, all_pairs_distances(g))
    b = node_logits(m, h, all_pairs_distances(h))
    np.testing.assert_allclose(b, a[perm], atol=1e-12)
    np.testing.assert_allclose(b.sum(axis=0), a.sum(axis=0), atol=1e-12)


def test_heads(rng):
    g = random_graph(rng, d=2)
    prof = all_pairs_distances(g)
    p = predict_graph(random_model(rng, 2, "graph-binary"), g, prof)
    assert 0 < p < 1
    q = predict_graph(random_model(rng, 2, "graph-multiclass", 4), g, prof)
    assert q.shape == (4,) and abs(q.sum() - 1) < 1e-12
    r = predict_node(random_model(rng, 2, "node-multiclass", 3), g, prof, 0)
    assert abs(r.sum() - 1) < 1e-12
    with pytest.raises(IndexError):
        predict_node(random_model(rng, 2, "node-binary"), g, prof, g.node_count)


def test_feature_dimension_checked(rng):
    m = random_model(rng, 2)
    g = random_graph(rng, d=3)
    with pytest.raises(SchemaError, match="3 features.*expects 2"):
        node_representations_tensor(m, g, all_pairs_distances(g))
    g2 = random_graph(rng, n=4, d=2)
    with pytest.raises(ContractError):
        node_representations_tensor(m, g2, all_pairs_distances(random_graph(rng, n=5, d=2)))


def test_constructor_contracts():
    with pytest.raises(ContractError):
        GnanModel(2, "edge-binary")
    with pytest.raises(ContractError):
        GnanModel(2, "graph-multiclass")
    with pytest.raises(ContractError):
        GnanModel(2, "graph-binary", n_classes=3)
    assert GnanModel(2, "graph-binary").output_dim == 1
    assert GnanModel(2, "node-multiclass", n_classes=5).output_dim == 5


@pytest.mark.parametrize("task,C,per_feature", [("graph-binary", None, False), ("node-multiclass", 3, True)])
def test_save_load_round_trip(tmp_path, rng, task, C, per_feature):
    m = random_model(rng, 3, task, C, per_feature=per_feature)
    m.metadata["classes"] = [0, 1, 2]
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.metadata == m.metadata
    g = random_graph(rng, d=3)
    prof = all_pairs_distances(g)
    assert np.max(np.abs(node_logits(back, g, prof) - node_logits(m, g, prof))) <= 1e-12
    doc = m.to_dict()
    doc["version"] = 99
    with pytest.raises(ContractError):
        GnanModel.from_dict(doc)


def test_float32_precision(rng):
    m = GnanModel(2, "graph-binary", hidden_layers=2, hidden_width=8, dtype=np.float32, rng=rng)
    g = random_graph(rng, d=2)
    prof = all_pairs_distances(g)
    assert m.feature_outputs(g.features).dtype == np.float32
    assert np.isfinite(graph_logit(m, g, prof)).all()
