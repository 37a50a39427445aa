import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acolgar.graph import ActivityGraph, build_graph, connected_components, percentile_threshold, spanning_check, stats_json, write_edges_csv


def dfs_components(m, edges):
    adj = [[] for _ in range(m)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, count = [False] * m, 0
    for s in range(m):
        if seen[s]:
            continue
        count += 1
        stack = [s]
        seen[s] = True
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
    return count


def test_three_row_example():
    g = build_graph(np.array([[1.0, 0], [1, 0], [0, 1]]), tau=0.5)
    assert g.edges.tolist() == [[0, 1]]


@pytest.mark.parametrize("tau", [0.0, 0.3, 0.99])
def test_one_hot_groups_give_two_components(tau):
    f = np.array([[1.0, 0]] * 4 + [[0, 1.0]] * 3)
    st_ = connected_components(build_graph(f, tau=tau))
    assert st_.delta == 2 and st_.sizes == [4, 3]


def test_threshold_above_max_isolates(rng):
    f = rng.random((10, 3))
    g = build_graph(f, tau=float((f @ f.T).max()) + 1)
    st_ = connected_components(g)
    assert len(g.edges) == 0 and st_.delta == 10 and st_.sizes == [1] * 10


def test_complete_graph():
    st_ = connected_components(build_graph(np.ones((6, 2)), tau=0.0))
    assert st_.delta == 1 and st_.mean_degree == [5.0]


def test_negative_tau_rejected():
    with pytest.raises(ValueError):
        build_graph(np.ones((2, 2)), tau=-1.0)


def test_block_diagonal_three_blocks(rng):
    blocks = [rng.integers(2, 8) for _ in range(3)]
    f = np.zeros((sum(blocks), 3))
    row = 0
    for b, n in enumerate(blocks):
        f[row:row + n, b] = rng.random(n) + 0.5
        row += n
    g = build_graph(f, tau=0.0)
    assert connected_components(g).delta == 3 == dfs_components(g.m, g.edges.tolist())


def test_random_graphs_against_dfs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = int(rng.integers(1, 30))
        f = rng.random((m, int(rng.integers(1, 5)))) * (rng.random((m, 1)) < 0.8)
        g = build_graph(f, q=float(rng.uniform(50, 99)))
        st_ = connected_components(g)
        assert st_.delta == dfs_components(m, g.edges.tolist())
        assert sum(st_.sizes) == m and st_.delta >= 1


def test_adjacency_bitwise_symmetric(rng):
    a = build_graph(rng.normal(size=(40, 17))).adjacency
    assert np.array_equal(a, a.T)


def test_percentile_threshold_off_diagonal():
    a = np.array([[100.0, 1, 2], [1, 100, 3], [2, 3, 100]])
    assert percentile_threshold(a, 50) == 2.0


def test_default_threshold_keeps_top_decile(rng):
    g = build_graph(rng.random((50, 4)))
    assert abs(len(g.edges) - 0.1 * 50 * 49 / 2) <= 1


def test_spanning_identical():
    g = build_graph(np.eye(3)[[0, 0, 1, 2, 2]], tau=0.5)
    rep = spanning_check(g, g)
    assert rep.fraction == 1.0 and rep.is_subset


def test_spanning_empty_gm():
    gy = build_graph(np.ones((3, 1)), tau=0.0)
    gm = build_graph(np.ones((3, 1)), tau=5.0)
    rep = spanning_check(gy, gm)
    assert rep.fraction == 1.0 and rep.is_subset and rep.edges_m == 0


def test_spanning_partial():
    gy = build_graph(np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]]), tau=0.5)
    gm = build_graph(np.array([[1.0, 0], [1, 0], [1, 0], [0, 1]]), tau=0.5)
    rep = spanning_check(gy, gm)
    assert rep.fraction == pytest.approx(1 / 3) and not rep.is_subset


def test_spanning_vertex_mismatch():
    with pytest.raises(ValueError):
        spanning_check(build_graph(np.ones((2, 1))), build_graph(np.ones((3, 1))))


@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_sizes_sum_to_m(m, seed):
    f = np.random.default_rng(seed).random((m, 2))
    st_ = connected_components(build_graph(f))
    assert sum(st_.sizes) == m and st_.sizes == sorted(st_.sizes, reverse=True)


def test_exports(tmp_path):
    g = build_graph(np.array([[1.0, 0], [2, 0], [0, 1]]), tau=0.5)
    write_edges_csv(tmp_path / "e.csv", g)
    assert (tmp_path / "e.csv").read_text().splitlines() == ["i,j,weight", "0,1,2.0"]
    d = json.loads(stats_json(connected_components(g), tau=g.tau))
    assert d["delta"] == 2 and d["tau"] == 0.5
