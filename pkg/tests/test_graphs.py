"""Graph statistics tests: slicing semantics, and PageRank / HITS /
triangles / articulation points against independent dense oracles."""

import numpy as np
import pytest

from creditdyn.graphs import (NODE_STAT_COLUMNS, SocialGraph,
                              articulation_points, hits, node_stats,
                              pagerank, triangle_counts)


def make_graph(n, edges, kinds=None, types=None, valid=None):
    node_ids = np.array([f"n{i}" for i in range(n)], dtype=object)
    node_kinds = np.array(kinds if kinds is not None else ["person"] * n,
                          dtype=object)
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    edge_type = np.array(types if types is not None
                         else ["transaction"] * len(edges), dtype=object)
    if valid is None:
        vf = np.zeros(len(edges), dtype=np.int64)
        vt = np.zeros(len(edges), dtype=np.int64)
    else:
        vf = np.array([v[0] for v in valid], dtype=np.int64)
        vt = np.array([v[1] for v in valid], dtype=np.int64)
    return SocialGraph(node_ids, node_kinds, src, dst, edge_type, vf, vt)


def random_graph(rng, n_max=50, p=0.1):
    n = int(rng.integers(2, n_max + 1))
    edges = [(i, j) for i in range(n) for j in range(n)
             if i != j and rng.random() < p]
    if not edges:
        edges = [(0, 1)]
    return make_graph(n, edges)


# -- oracles --------------------------------------------------------------

def dense_pagerank(graph, damping=0.85, iters=5000):
    n = graph.n_nodes
    pairs = graph.directed_pairs()
    M = np.zeros((n, n))
    for s, d in pairs:
        M[d, s] = 1.0
    out = M.sum(axis=0)
    dangling = out == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        M = np.where(out > 0, M / out, 0.0)
    r = np.full(n, 1.0 / n)
    for _ in range(iters):
        r = (1 - damping) / n + damping * (M @ r + r[dangling].sum() / n)
    return r / r.sum()


def dense_hits(graph, iters=100000):
    n = graph.n_nodes
    pairs = graph.directed_pairs()
    if pairs.size == 0:
        return np.zeros(n), np.zeros(n)
    A = np.zeros((n, n))
    for s, d in pairs:
        A[s, d] = 1.0
    hub = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(iters):
        auth = A.T @ hub
        auth /= np.linalg.norm(auth)
        hub = A @ auth
        hub /= np.linalg.norm(hub)
    return auth, hub


def brute_triangles(graph):
    pairs = {tuple(p) for p in graph.undirected_pairs().tolist()}
    n = graph.n_nodes
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if ((i, j) in pairs and (j, k) in pairs and (i, k) in pairs):
                    counts[i] += 1
                    counts[j] += 1
                    counts[k] += 1
    return counts


def brute_articulation(graph):
    n = graph.n_nodes
    adj = [set() for _ in range(n)]
    for a, b in graph.undirected_pairs():
        adj[a].add(b)
        adj[b].add(a)

    def n_components(skip):
        seen = set()
        comps = 0
        for s in range(n):
            if s == skip or s in seen:
                continue
            comps += 1
            stack = [s]
            while stack:
                u = stack.pop()
                if u in seen or u == skip:
                    continue
                seen.add(u)
                stack.extend(v for v in adj[u] if v != skip)
        return comps

    base = n_components(-1)
    out = set()
    for v in range(n):
        # removing v also removes one node: compare against base with v gone
        if n_components(v) > base - (1 if not adj[v] else 0):
            out.add(graph.node_ids[v])
    return out


# -- slicing --------------------------------------------------------------

class TestSlice:
    def test_static_edges_always_retained(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        for month in (1, 7, 24):
            assert g.slice(month).n_edges == 2

    def test_interval_exclusion(self):
        g = make_graph(2, [(0, 1)], valid=[(3, 5)])
        assert g.slice(6).n_edges == 0

    def test_interval_inclusion(self):
        g = make_graph(2, [(0, 1)], valid=[(3, 5)])
        assert g.slice(4).n_edges == 1

    def test_node_set_unchanged(self):
        g = make_graph(4, [(0, 1)], valid=[(2, 2)])
        assert g.slice(9).n_nodes == 4

    def test_month_below_one_raises(self):
        with pytest.raises(ValueError):
            make_graph(2, [(0, 1)]).slice(0)

    def test_invalid_interval_raises(self):
        with pytest.raises(ValueError):
            make_graph(2, [(0, 1)], valid=[(5, 3)])


# -- pagerank -------------------------------------------------------------

class TestPagerank:
    def test_mutual_pair(self):
        g = make_graph(2, [(0, 1), (1, 0)])
        assert pagerank(g) == pytest.approx([0.5, 0.5], abs=1e-9)

    def test_isolated_nodes_uniform(self):
        g = make_graph(4, [])
        assert pagerank(g) == pytest.approx([0.25] * 4, abs=1e-9)

    def test_directed_chain_matches_oracle(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        assert np.abs(pagerank(g) - dense_pagerank(g)).max() < 1e-6

    def test_sums_to_one_and_positive(self, rng):
        for _ in range(20):
            g = random_graph(rng)
            r = pagerank(g)
            assert r.sum() == pytest.approx(1.0, abs=1e-6)
            assert (r > 0).all()

    def test_matches_dense_oracle(self, rng):
        for _ in range(30):
            g = random_graph(rng, n_max=20)
            assert np.abs(pagerank(g) - dense_pagerank(g)).max() < 1e-6

    def test_bad_damping_raises(self):
        with pytest.raises(ValueError):
            pagerank(make_graph(2, [(0, 1)]), damping=1.0)


# -- hits -----------------------------------------------------------------

class TestHits:
    def test_single_edge(self):
        auth, hub = hits(make_graph(3, [(0, 1)]))
        assert auth == pytest.approx([0, 1, 0], abs=1e-9)
        assert hub == pytest.approx([1, 0, 0], abs=1e-9)

    def test_complete_digraph_symmetry(self):
        n = 4
        g = make_graph(n, [(i, j) for i in range(n) for j in range(n) if i != j])
        auth, hub = hits(g)
        assert auth == pytest.approx([auth[0]] * n, abs=1e-9)
        assert hub == pytest.approx([hub[0]] * n, abs=1e-9)

    def test_zero_edge_graph(self):
        auth, hub = hits(make_graph(3, []))
        assert (auth == 0).all() and (hub == 0).all()

    def test_unit_norm(self, rng):
        for _ in range(10):
            g = random_graph(rng)
            auth, hub = hits(g, max_iter=50000)
            assert np.linalg.norm(auth) == pytest.approx(1.0, abs=1e-9)
            assert np.linalg.norm(hub) == pytest.approx(1.0, abs=1e-9)

    def test_matches_dense_oracle_on_dags(self, rng):
        for _ in range(20):
            n = int(rng.integers(3, 15))
            edges = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if rng.random() < 0.3]
            if not edges:
                edges = [(0, n - 1)]
            g = make_graph(n, edges)
            auth, hub = hits(g, max_iter=100000)
            oa, oh = dense_hits(g, iters=3000)
            assert np.abs(auth - oa).max() < 1e-6
            assert np.abs(hub - oh).max() < 1e-6


# -- triangles and articulation -------------------------------------------

class TestTriangles:
    def test_k3(self):
        g = make_graph(3, [(0, 1), (1, 2), (2, 0)])
        assert triangle_counts(g).tolist() == [1, 1, 1]

    def test_path_has_none(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        assert triangle_counts(g).tolist() == [0, 0, 0]

    def test_matches_brute_force(self, rng):
        for _ in range(50):
            g = random_graph(rng, n_max=50, p=0.15)
            assert np.array_equal(triangle_counts(g), brute_triangles(g))


class TestArticulation:
    def test_cycle_has_none(self):
        g = make_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        assert articulation_points(g) == set()

    def test_path_middle(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        assert articulation_points(g) == {"n1"}

    def test_matches_remove_and_recount(self, rng):
        for _ in range(50):
            g = random_graph(rng, n_max=50, p=0.08)
            assert articulation_points(g) == brute_articulation(g)


# -- node_stats -----------------------------------------------------------

class TestNodeStats:
    def test_k3_row(self):
        g = make_graph(3, [(0, 1), (1, 2), (2, 0)])
        df = node_stats(g)
        assert list(df.columns) == NODE_STAT_COLUMNS
        assert df["degree"].tolist() == [2, 2, 2]
        assert df["degree_centrality"].tolist() == [1.0, 1.0, 1.0]
        assert df["triangle_count"].tolist() == [1, 1, 1]
        assert df["pagerank"].to_numpy() == pytest.approx([1 / 3] * 3, abs=1e-6)
        assert not df["is_articulation_point"].any()

    def test_path_articulation_flag(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        df = node_stats(g)
        assert df["is_articulation_point"].tolist() == [False, True, False]

    def test_degree_centrality_small_graphs(self):
        assert node_stats(make_graph(1, []))["degree_centrality"].tolist() == [0.0]

    def test_order_independence(self, rng):
        edges = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)]
        g1 = make_graph(5, edges)
        g2 = make_graph(5, edges[::-1])
        a = node_stats(g1).to_numpy(dtype=float)
        b = node_stats(g2).to_numpy(dtype=float)
        assert np.abs(a - b).max() < 1e-9


class TestProjections:
    def test_duplicate_and_self_loops_collapsed(self):
        g = make_graph(3, [(0, 1), (0, 1), (1, 0), (2, 2)])
        assert g.undirected_pairs().tolist() == [[0, 1]]

    def test_marriage_expanded_both_ways(self):
        g = make_graph(2, [(0, 1)], types=["marriage"])
        assert g.directed_pairs().tolist() == [[0, 1], [1, 0]]

    def test_directed_type_not_expanded(self):
        g = make_graph(2, [(0, 1)], types=["parent_child"])
        assert g.directed_pairs().tolist() == [[0, 1]]


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        g = make_graph(4, [(0, 1), (2, 3)], types=["marriage", "employment"],
                       valid=[(0, 0), (2, 9)])
        path = tmp_path / "edges.csv"
        g.to_csv(path)
        g2 = SocialGraph.from_csv(path, g.node_ids, g.node_kinds)
        assert np.array_equal(g.src, g2.src)
        assert np.array_equal(g.dst, g2.dst)
        assert np.array_equal(g.edge_type, g2.edge_type)
        assert np.array_equal(g.valid_from, g2.valid_from)
        assert np.array_equal(g.valid_to, g2.valid_to)

    def test_unknown_endpoint_rejected(self, tmp_path):
        g = make_graph(2, [(0, 1)])
        path = tmp_path / "edges.csv"
        g.to_csv(path)
        with pytest.raises(ValueError):
            SocialGraph.from_csv(path, g.node_ids[:1], g.node_kinds[:1])
