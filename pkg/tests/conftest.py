import numpy as np
import pytest

from gnan.graph import GraphInstance, all_pairs_distances
from gnan.model import GnanModel

ACCEPTANCE = []
"""PASS/FAIL lines emitted by the acceptance suite, repeated in the terminal summary."""


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def random_graph(rng, n=None, p=0.3, d=3, binary=False, n_max=12):
    n = int(rng.integers(1, n_max + 1)) if n is None else n
    iu = np.triu_indices(n, k=1)
    keep = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    X = (rng.random((n, d)) < 0.4).astype(float) if binary else rng.normal(size=(n, d))
    return GraphInstance(features=X, edges=edges)


def random_model(rng, d, task="graph-binary", n_classes=None, normalize=True, per_feature=False,
                 layers=2, width=8):
    seed = int(rng.integers(2**31))
    return GnanModel(d, task, n_classes=n_classes, hidden_layers=layers, hidden_width=width,
                     normalize_by_count=normalize, per_feature_distance=per_feature,
                     rng=np.random.default_rng(seed))


def zero_model(d, task="graph-binary", n_classes=None):
    m = GnanModel(d, task, n_classes=n_classes, hidden_layers=1, hidden_width=4)
    for p in m.parameters():
        p[...] = 0.0
    return m


def with_profile(g):
    return g, all_pairs_distances(g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_graph():
    """Path 0-1-2 with an isolated node 3."""
    X = np.array([[0.1, 1.0], [0.5, 0.0], [0.9, 1.0], [0.3, 0.0]])
    return GraphInstance(features=X, edges=[(0, 1), (1, 2)], graph_label=1,
                         node_labels=[0, 1, 0, 1])


@pytest.fixture
def three_node_dataset():
    """Three labelled 3-node graphs, the CLI smoke fixture."""
    X = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    return [GraphInstance(features=X + 0.1 * k, edges=[(0, 1), (1, 2)], graph_label=k % 2) for k in range(3)]
