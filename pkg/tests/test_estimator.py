import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gnan import GNANClassifier, GNANRegressor
from gnan.datasets import SyntheticConfig, generate_synthetic
from gnan.estimator import encode_labels, infer_head
from gnan.exceptions import SchemaError
from gnan.graph import GraphInstance


@pytest.fixture(scope="module")
def graphs():
    gs = generate_synthetic(SyntheticConfig(n_graphs=40, n_features=2, shape_functions=("linear",), seed=0))
    for g in gs:
        g.graph_label = "active" if g.graph_label else "inactive"
    return gs


def test_params_and_clone():
    est = GNANClassifier(hidden_width=16, epochs=3)
    assert est.get_params()["hidden_width"] == 16
    c = clone(est).set_params(epochs=7)
    assert c.epochs == 7 and est.epochs == 3


def test_classifier_fit_predict(graphs):
    est = GNANClassifier(epochs=30, hidden_width=16, learning_rate=1e-2).fit(graphs)
    assert est.classes_.tolist() == ["active", "inactive"]
    proba = est.predict_proba(graphs)
    assert proba.shape == (40, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    pred = est.predict(graphs)
    assert set(pred) <= {"active", "inactive"}
    y = [g.graph_label for g in graphs]
    assert est.score(graphs, y) == np.mean(pred == np.array(y))
    assert est.model_.metadata["max_distance"] >= 1


def test_classifier_explicit_y(graphs):
    y = np.arange(40) % 3
    est = GNANClassifier(epochs=2, hidden_width=8).fit(graphs, y)
    p = est.predict_proba(graphs[:5])
    assert p.shape == (5, 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_node_level():
    gs = generate_synthetic(SyntheticConfig(n_graphs=2, level="node", n_nodes=(10, 12), n_features=2, seed=1))
    est = GNANClassifier(level="node", epochs=5, hidden_width=8).fit(gs)
    assert est.predict(gs).shape == (sum(g.node_count for g in gs),)


def test_regressor():
    gs = generate_synthetic(SyntheticConfig(n_graphs=20, n_features=2, target="regression", seed=2))
    est = GNANRegressor(epochs=5, hidden_width=8).fit(gs)
    assert est.predict(gs).shape == (20,)
    assert np.isfinite(est.score(gs, [g.graph_label for g in gs]))


def test_errors(graphs):
    with pytest.raises(NotFittedError):
        GNANClassifier().predict(graphs)
    est = GNANClassifier(epochs=1, hidden_width=4).fit(graphs)
    with pytest.raises(SchemaError, match="3 features.*expects 2"):
        est.predict([GraphInstance(features=[[0.0, 1.0, 2.0]])])
    with pytest.raises(SchemaError):
        GNANClassifier().fit([1, 2])


def test_label_helpers():
    assert infer_head([0.5, 1.0]) == "regression"
    assert infer_head([0, 1, 1]) == "binary"
    assert infer_head([0, 1, 2]) == "multiclass"
    enc, cls = encode_labels(["b", "a", "b"])
    assert enc.tolist() == [1, 0, 1] and cls.tolist() == ["a", "b"]
    with pytest.raises(SchemaError):
        encode_labels(["c"], cls)
