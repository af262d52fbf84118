import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surf import graph
from surf.errors import ParameterError, StructuralError


def bfs_connected(adj):
    seen, frontier = {0}, [0]
    while frontier:
        u = frontier.pop()
        for v in np.flatnonzero(adj[u]):
            if v not in seen:
                seen.add(int(v))
                frontier.append(int(v))
    return len(seen) == len(adj)


def test_regular_full_scale():
    g = graph.make_regular(100, 3, seed=7)
    assert g.n == 100
    assert np.all(g.degrees == 3)
    assert bfs_connected(g.adjacency)


def test_regular_k4_is_complete():
    g = graph.make_regular(4, 3, seed=0)
    assert g.edges == frozenset(itertools.combinations(range(4), 2))


def test_regular_cycle_degrees_and_reachability():
    g = graph.make_regular(6, 2, seed=1)
    assert g.adjacency.sum(axis=1).tolist() == [2] * 6
    assert bfs_connected(g.adjacency)


@pytest.mark.parametrize("n,k", [(5, 3), (4, 4), (3, 5)])
def test_regular_infeasible(n, k):
    with pytest.raises(ParameterError):
        graph.make_regular(n, k, seed=0)


def test_erdos_renyi_connected():
    g = graph.make_erdos_renyi(100, 0.1, seed=3)
    assert g.is_connected()
    assert bfs_connected(g.adjacency)


def test_erdos_renyi_p1_single_edge():
    assert graph.make_erdos_renyi(2, 1.0, seed=0).edges == frozenset({(0, 1)})


@pytest.mark.parametrize("p", [0.0, -0.2, 1.5])
def test_erdos_renyi_bad_p(p):
    with pytest.raises(ParameterError):
        graph.make_erdos_renyi(10, p, seed=0)


def test_erdos_renyi_edge_count_monte_carlo():
    # resampling until connected conditions on connectivity, which inflates the
    # count a little; the mean must stay within 3 single-draw sigmas of p*C(n,2)
    n, p = 30, 0.1
    pairs = math.comb(n, 2)
    counts = [len(graph.make_erdos_renyi(n, p, seed=s).edges) for s in range(100)]
    sigma = math.sqrt(pairs * p * (1 - p))
    assert abs(np.mean(counts) - p * pairs) <= 3 * sigma


def test_star():
    g = graph.make_star(101)
    assert g.degrees[0] == 100 and np.all(g.degrees[1:] == 1)
    assert len(graph.make_star(2).edges) == 1
    assert graph.make_star(5).adjacency.sum(axis=1).tolist() == [4, 1, 1, 1, 1]
    with pytest.raises(ParameterError):
        graph.make_star(1)


def test_shift_operator_k4():
    S = graph.shift_operator(graph.make_regular(4, 3, 0))
    expected = (np.ones((4, 4)) - np.eye(4)) / 3
    np.testing.assert_allclose(S, expected, atol=1e-15)


def test_shift_operator_single_edge():
    S = graph.shift_operator(graph.Graph.from_edges(2, [(0, 1)]))
    np.testing.assert_array_equal(S, [[0.0, 1.0], [1.0, 0.0]])


def test_shift_operator_regular_top_eigenvalue_power_iteration():
    S = graph.shift_operator(graph.make_regular(30, 3, 2))
    v = np.random.default_rng(0).random(30) + 0.1
    for _ in range(2000):
        v = S @ v
        v /= np.linalg.norm(v)
    assert v @ S @ v == pytest.approx(1.0, abs=1e-9)


def test_shift_operator_isolated_node():
    g = graph.Graph.from_edges(3, [(0, 1)])
    with pytest.raises(StructuralError):
        graph.shift_operator(g)


def test_star_row_shift():
    S = graph.shift_operator(graph.make_star(5), graph.STAR_ROW)
    np.testing.assert_allclose(S[0], [0, 0.25, 0.25, 0.25, 0.25])
    np.testing.assert_allclose(S[1:, 0], 1.0)


def test_metropolis_regular_and_complete():
    k = 3
    A = graph.metropolis_weights(graph.make_regular(10, k, 4))
    adj = graph.make_regular(10, k, 4).adjacency
    np.testing.assert_allclose(A[adj == 1], 1 / (k + 1))
    np.testing.assert_allclose(np.diag(A), 1 / (k + 1))
    np.testing.assert_allclose(graph.metropolis_weights(graph.make_regular(4, 3, 0)), np.full((4, 4), 0.25))


graphs = st.one_of(
    st.builds(lambda n, s: graph.make_erdos_renyi(n, 0.3, s), st.integers(2, 15), st.integers(0, 10_000)),
    st.builds(lambda n, s: graph.make_regular(2 * n, 3, s), st.integers(2, 8), st.integers(0, 10_000)),
)


@settings(max_examples=30, deadline=None)
@given(graphs)
def test_metropolis_properties(g):
    A = graph.metropolis_weights(g)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(A, A.T)
    assert np.all(A >= 0)
    off = ~np.eye(g.n, dtype=bool) & (g.adjacency == 0)
    assert np.all(A[off] == 0)
    eig = np.sort(np.abs(np.linalg.eigvalsh(A)))
    assert g.n == 1 or eig[-2] < 1 - 1e-12


@settings(max_examples=30, deadline=None)
@given(graphs, st.integers(0, 1000))
def test_metropolis_consensus_contracts(g, seed):
    A = graph.metropolis_weights(g)
    x = np.random.default_rng(seed).standard_normal((g.n, 3))
    mean = x.mean(axis=0)
    prev = np.linalg.norm(x - mean)
    for _ in range(30):
        x = A @ x
        cur = np.linalg.norm(x - mean)
        assert cur <= prev + 1e-12
        prev = cur
    np.testing.assert_allclose(x.mean(axis=0), mean, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(graphs)
def test_normalized_adjacency_spectral_radius(g):
    S = graph.shift_operator(g)
    np.testing.assert_array_equal(S, S.T)
    assert np.max(np.abs(np.linalg.eigvalsh(S))) <= 1 + 1e-12


def test_edgelist_roundtrip(tmp_path):
    g = graph.make_regular(12, 3, 5)
    graph.write_edgelist(g, tmp_path / "g.txt")
    lines = (tmp_path / "g.txt").read_text().splitlines()
    assert lines[0] == "12 18"
    assert graph.read_edgelist(tmp_path / "g.txt") == g


def test_permute_relabels():
    g = graph.make_star(4)
    perm = np.array([3, 0, 1, 2])
    gp = g.permute(perm)
    np.testing.assert_array_equal(gp.adjacency, g.adjacency[np.ix_(perm, perm)])
