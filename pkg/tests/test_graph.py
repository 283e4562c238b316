import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from gnan.exceptions import ConfigError, GraphValidationError, SchemaError
from gnan.graph import (UNREACHABLE, GraphInstance, all_pairs_distances, compute_profiles, scale_distance)


def floyd_warshall(n, edges):
    """Independent all-pairs oracle: dense Floyd-Warshall with inf for no path."""
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0)
    for u, v in edges:
        D[u, v] = D[v, u] = 1
    for k in range(n):
        D = np.minimum(D, D[:, k:k + 1] + D[k:k + 1, :])
    return D


def test_path_graph_distances(tiny_graph):
    prof = all_pairs_distances(tiny_graph)
    expected = np.array([[0, 1, 2, -1], [1, 0, 1, -1], [2, 1, 0, -1], [-1, -1, -1, 0]])
    np.testing.assert_array_equal(prof.dist, expected)
    assert prof.count(1, 1) == 2
    assert prof.count(0, UNREACHABLE) == 1
    assert prof.bucket_counts(0) == {-1: 1, 0: 1, 1: 1, 2: 1}
    np.testing.assert_allclose(prof.scaled[0], [1.0, 0.5, 1 / 3, 0.0])


def test_single_node():
    prof = all_pairs_distances(GraphInstance(features=[[1.0]]))
    assert prof.dist.tolist() == [[0]]
    assert prof.pair_count.tolist() == [[1]]
    assert prof.scaled.tolist() == [[1.0]]


def test_self_bucket_counts_only_self(rng):
    for _ in range(20):
        prof = all_pairs_distances(random_graph(rng))
        assert np.all(np.diag(prof.pair_count) == 1)


@pytest.mark.parametrize("seed", range(10))
def test_bfs_matches_floyd_warshall(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n_max=25, p=float(rng.uniform(0.02, 0.4)))
    prof = all_pairs_distances(g)
    D = floyd_warshall(g.node_count, g.edges)
    got = np.where(prof.dist == UNREACHABLE, np.inf, prof.dist)
    np.testing.assert_array_equal(got, D)


def test_pair_count_definition(rng):
    g = random_graph(rng, n=15, p=0.2)
    prof = all_pairs_distances(g)
    for i in range(15):
        for j in range(15):
            assert prof.pair_count[i, j] == np.sum(prof.dist[i] == prof.dist[i, j])


def test_max_distance_truncates(tiny_graph):
    prof = all_pairs_distances(tiny_graph, max_distance=1)
    assert prof.dist[0, 2] == UNREACHABLE
    assert prof.dist[0, 1] == 1
    with pytest.raises(ConfigError):
        all_pairs_distances(tiny_graph, max_distance=-1)


def test_profiles_are_read_only(tiny_graph):
    prof = all_pairs_distances(tiny_graph)
    with pytest.raises(ValueError):
        prof.dist[0, 0] = 5


def test_threaded_profiles_match(rng):
    graphs = [random_graph(rng) for _ in range(12)]
    a = compute_profiles(graphs, threads=1)
    b = compute_profiles(graphs, threads=4)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.dist, q.dist)


def test_scale_distance():
    np.testing.assert_array_equal(scale_distance([0, 1, 3, UNREACHABLE]), [1.0, 0.5, 0.25, 0.0])


def test_edges_canonicalized():
    g = GraphInstance(features=np.zeros((3, 1)), edges=[(1, 0), (0, 1), (2, 2), (2, 1)])
    assert g.edges.tolist() == [[0, 1], [1, 2]]


def test_dangling_edge_rejected():
    with pytest.raises(GraphValidationError, match="outside 0..2"):
        GraphInstance(features=np.zeros((3, 1)), edges=[(0, 3)])


def test_feature_shape_checked():
    with pytest.raises(SchemaError):
        GraphInstance(features=np.zeros((0, 2)))
    with pytest.raises(GraphValidationError):
        GraphInstance(features=[[np.nan]])


def test_masks():
    g = GraphInstance(features=np.zeros((4, 1)), masks={"train": [0, 1], "test": [3]})
    assert g.mask("train").tolist() == [0, 1]
    assert g.mask("val").tolist() == []
    with pytest.raises(GraphValidationError, match="overlap"):
        GraphInstance(features=np.zeros((4, 1)), masks={"train": [0, 1], "test": [1]})
    with pytest.raises(SchemaError):
        GraphInstance(features=np.zeros((4, 1)), masks={"holdout": [0]})
    assert GraphInstance(features=np.zeros((2, 1))).mask("train").tolist() == [0, 1]


def test_permute_relabels(tiny_graph):
    perm = [3, 1, 0, 2]
    h = tiny_graph.permute(perm)
    np.testing.assert_array_equal(h.features, tiny_graph.features[perm])
    p0, p1 = all_pairs_distances(tiny_graph), all_pairs_distances(h)
    np.testing.assert_array_equal(p1.dist, p0.dist[np.ix_(perm, perm)])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 14), data=st.data())
def test_distance_symmetry_and_triangle(n, data):
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = data.draw(st.lists(st.sampled_from(pairs), max_size=20)) if pairs else []
    g = GraphInstance(features=np.zeros((n, 1)), edges=edges)
    D = all_pairs_distances(g).dist
    np.testing.assert_array_equal(D, D.T)
    Df = np.where(D < 0, np.inf, D)
    for k in range(n):
        assert np.all(Df <= Df[:, k:k + 1] + Df[k:k + 1, :])
    for u, v in g.edges:
        assert D[u, v] == 1
