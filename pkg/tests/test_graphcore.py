import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scafds.graphcore import (
    GraphError,
    InfeasibleError,
    InterbankGraph,
    pagerank,
    ras_estimate,
    read_graph_csv,
    shuffle_edge_features,
    standardize,
    unshuffle_edge_features,
    write_edges_csv,
    write_nodes_csv,
)
from conftest import random_graph


def dense_pagerank(n, src, dst, w, damping, iters=5000):
    P = np.zeros((n, n))
    for s, d, x in zip(src, dst, w):
        P[s, d] += x
    out = P.sum(axis=1)
    for i in range(n):
        P[i] = P[i] / out[i] if out[i] > 0 else 1.0 / n
    r = np.full(n, 1.0 / n)
    for _ in range(iters):
        r = damping * (r @ P) + (1 - damping) / n
    return r / r.sum()


def graph(n, edges, ef=None):
    src = [e[0] for e in edges]
    dst = [e[1] for e in edges]
    ef = np.full((len(edges), 3), 0.5) if ef is None else ef
    return InterbankGraph.from_arrays([f"b{i}" for i in range(n)], np.zeros((n, 6)), src, dst,
                                      np.ones(len(edges)), ef)


def test_pagerank_examples():
    full = graph(3, [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)])
    assert np.allclose(pagerank(full), 1 / 3, atol=1e-12)
    assert np.array_equal(pagerank(graph(1, [])), [1.0])
    chain = graph(3, [(0, 1), (1, 2)])
    ref = dense_pagerank(3, [0, 1], [1, 2], [1.0, 1.0], 0.85)
    assert np.max(np.abs(pagerank(chain, damping=0.85) - ref)) < 1e-8


def test_pagerank_rejects_bad_input():
    with pytest.raises(ValueError):
        pagerank(graph(2, [(0, 1)]), damping=1.0)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_pagerank_simplex_and_relabeling(seed):
    g = random_graph(12, 30, seed)
    r = pagerank(g, weights="exposure")
    assert abs(r.sum() - 1) < 1e-10
    perm = np.random.default_rng(seed).permutation(12)
    r2 = pagerank(g.relabel(perm), weights="exposure")
    assert np.allclose(r2[perm], r, atol=1e-10)


def test_ras_examples():
    assert np.allclose(ras_estimate([1, 1], [1, 1], forbid_diagonal=False), 0.5)
    assert np.allclose(ras_estimate([2, 0], [1, 1], forbid_diagonal=False), [[1, 1], [0, 0]])
    x = ras_estimate([3, 2, 1], [2, 2, 2], forbid_diagonal=True, tol=1e-13)
    # independent IPF written directly over the masked matrix
    ref = np.ones((3, 3)) - np.eye(3)
    for _ in range(20000):
        ref *= (np.array([3, 2, 1]) / ref.sum(axis=1))[:, None]
        ref *= (np.array([2, 2, 2]) / ref.sum(axis=0))[None, :]
    assert np.max(np.abs(x - ref)) < 1e-8
    assert np.all(np.diag(x) == 0)


def test_ras_infeasible():
    with pytest.raises(InfeasibleError):
        ras_estimate([1, 1], [1, 2])
    with pytest.raises(InfeasibleError):
        ras_estimate([1, 0], [1, 0], forbid_diagonal=True)


def test_shuffle_examples():
    g = graph(3, [(0, 1), (1, 2), (2, 0)])
    assert shuffle_edge_features(g, 0).edge_matrix().tolist() == g.edge_matrix().tolist()
    two = graph(2, [(0, 1), (1, 0)], ef=np.array([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]))
    seed = next(s for s in range(100) if shuffle_edge_features(two, s, True)[1].tolist() == [1, 0])
    out = shuffle_edge_features(two, seed)
    assert out.edge_matrix().tolist() == [[0.9] * 3, [0.1] * 3]
    assert out.edge_index()[0].tolist() == [0, 1]


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_shuffle_multiset_and_inverse(seed):
    g = random_graph(8, 20, seed)
    out, perm = shuffle_edge_features(g, seed, return_permutation=True)
    key = lambda m: sorted(map(tuple, m))
    assert key(out.edge_matrix()) == key(g.edge_matrix())
    assert np.array_equal(out.edge_index()[0], g.edge_index()[0])
    assert unshuffle_edge_features(out, perm) == g


def test_graph_validation():
    with pytest.raises(GraphError):
        graph(2, [(0, 0)])
    with pytest.raises(GraphError):
        graph(2, [(0, 1), (0, 1)])
    with pytest.raises(GraphError):
        graph(2, [(0, 1)], ef=np.array([[1.5, 0, 0]]))


def test_csv_round_trip(tmp_path):
    g = random_graph(9, 20, 4)
    write_nodes_csv(g, tmp_path / "n.csv")
    write_edges_csv(g, tmp_path / "e.csv")
    back = read_graph_csv(tmp_path / "n.csv", tmp_path / "e.csv")
    assert back == g
    assert np.array_equal(back.node_matrix(), g.node_matrix())


def test_standardize_constant_column():
    z, mean, std = standardize(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert np.array_equal(z[:, 1], [0.0, 0.0])
    assert np.allclose(z[:, 0], [-1.0, 1.0])
