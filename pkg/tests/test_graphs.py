from collections import OrderedDict, defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farsim.graphs import (EmptyGraphError, GraphError, GraphParseError, compute_clfr, from_edges,
                           gen_clustered, gen_grid, gen_kronecker, gen_urand, graph_stats, load_edge_list,
                           read_csr, reference_pagerank, write_csr)


def brute_csr(src, dst, n):
    adj = defaultdict(list)
    for u, v in zip(src, dst):
        adj[v].append(u)
    offsets, targets = [0], []
    for v in range(n):
        targets += sorted(adj[v])
        offsets.append(len(targets))
    return offsets, targets


def test_two_edge_file(tmp_path):
    p = tmp_path / "g.el"
    p.write_text("0 1\n1 0\n")
    g = load_edge_list(p)
    assert g.n_nodes == 2 and list(g.offsets) == [0, 1, 2]


def test_comment_only_file(tmp_path):
    p = tmp_path / "g.el"
    p.write_text("# nothing\n\n# here\n")
    with pytest.raises(EmptyGraphError):
        load_edge_list(p)


@pytest.mark.parametrize("text", ["0 1 2\n", "a b\n", "-1 2\n", "0 4294967296\n"])
def test_bad_edge_lines(tmp_path, text):
    p = tmp_path / "g.el"
    p.write_text("0 1\n" + text)
    with pytest.raises(GraphParseError):
        load_edge_list(p)


def test_random_file_matches_brute_force(tmp_path):
    rng = np.random.default_rng(3)
    n, m = 5000, 100_000
    src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
    src[0], dst[0] = n - 1, n - 1
    p = tmp_path / "g.el"
    p.write_text("".join(f"{u} {v}\n" for u, v in zip(src, dst)))
    g = load_edge_list(p)
    offsets, targets = brute_csr(src.tolist(), dst.tolist(), n)
    assert list(g.offsets) == offsets
    assert list(g.targets) == targets


def test_csr_roundtrip(tmp_path):
    g = gen_kronecker(8, 4, 1)
    write_csr(g, tmp_path / "g.csr")
    assert read_csr(tmp_path / "g.csr") == g


def test_csr_rejects_corruption(tmp_path):
    g = gen_grid(3, 3)
    p = tmp_path / "g.csr"
    write_csr(g, p)
    raw = p.read_bytes()
    (tmp_path / "bad1").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "bad2").write_bytes(raw[:-1])
    for name in ("bad1", "bad2"):
        with pytest.raises(GraphError):
            read_csr(tmp_path / name)


def test_csr_validation():
    with pytest.raises(GraphError):
        from_edges([0], [5], 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=80))))
def test_from_edges_invariants(case):
    n, edges = case
    src = [u for u, _ in edges]
    dst = [v for _, v in edges]
    g = from_edges(src, dst, n)
    assert np.all(np.diff(g.offsets.astype(np.int64)) >= 0)
    assert int(g.offsets[-1]) == g.n_edges == len(edges)
    assert all(t < n for t in g.targets)
    assert (list(g.offsets), list(g.targets)) == brute_csr(src, dst, n)
    assert g.out_degree().sum() == g.in_degree().sum() == len(edges)


def test_kronecker_deterministic():
    assert gen_kronecker(4, 8, 9) == gen_kronecker(4, 8, 9)
    assert gen_kronecker(4, 8, 9) != gen_kronecker(4, 8, 10)


def test_kronecker_scale_zero_self_loops():
    g = gen_kronecker(0, 5, 1)
    assert g.n_nodes == 1 and g.n_edges == 5 and set(g.targets) == {0}


def test_kronecker_skew():
    g = gen_kronecker(16, 16, 1)
    deg = g.in_degree()
    assert deg.max() >= 100 * deg.mean()


def test_grid_shape():
    g = gen_grid(3, 3)
    assert g.n_nodes == 9 and g.in_degree().max() <= 4
    assert g.n_edges == 2 * (2 * 3 * 2)


def test_urand_clfr_near_one():
    g = gen_urand(1 << 16, 1 << 18, 1)
    assert compute_clfr(g, 4 << 10) > 0.98


def test_clustered_clfr_below_urand():
    urand = gen_urand(1 << 14, 1 << 16, 2)
    local = gen_clustered(1 << 14, 1 << 16, 0.001, 2)
    assert compute_clfr(local, 16 << 10) < 0.5 * compute_clfr(urand, 16 << 10)


def test_clfr_consecutive_neighbours():
    g = from_edges(list(range(32)), [0] * 32, 32)
    assert compute_clfr(g, 128) == pytest.approx(1 / 32)


def hand_lru(lines, capacity):
    cache, misses = OrderedDict(), 0
    for ln in lines:
        if ln in cache:
            cache.move_to_end(ln)
        else:
            misses += 1
            cache[ln] = True
            if len(cache) > capacity:
                cache.popitem(last=False)
    return misses


def test_clfr_toy_matches_hand_lru():
    rng = np.random.default_rng(4)
    src, dst = rng.integers(0, 256, 64), rng.integers(0, 16, 64)
    g = from_edges(src, dst, 256)
    lines = [int(t) * 4 // 128 for t in g.targets]
    assert compute_clfr(g, 2 * 128) == pytest.approx(hand_lru(lines, 2) / 64)


def test_clfr_invariant_under_line_preserving_relabel():
    g = gen_urand(1024, 4096, 3)
    rng = np.random.default_rng(0)
    # permute ids only within each 32-id line
    perm = np.concatenate([rng.permutation(32) + 32 * k for k in range(1024 // 32)])
    h = from_edges(perm[g.targets.astype(np.int64)], g.edge_owner(), 1024)
    assert compute_clfr(h, 4096) == compute_clfr(g, 4096)


def test_graph_stats():
    s = graph_stats(gen_grid(4, 4), 1 << 10)
    assert s.max_in_degree == 4 and 0 < s.clfr <= 1


# -- reference PageRank ---------------------------------------------------------------------

def naive_pagerank(edges, n, iters, d):
    out = [0] * n
    for u, _ in edges:
        out[u] += 1
    score = [1.0 / n] * n
    for _ in range(iters):
        new = [(1 - d) / n] * n
        for u, v in edges:
            new[v] += d * score[u] / out[u]
        score = new
    return score


def test_triangle_uniform():
    g = from_edges([0, 1, 2, 1, 2, 0], [1, 2, 0, 0, 1, 2], 3)
    assert np.allclose(reference_pagerank(g, 1), 1 / 3)


def test_two_cycle():
    g = from_edges([0, 1], [1, 0], 2)
    for iters in (1, 5, 20):
        assert np.allclose(reference_pagerank(g, iters), 0.5)


def test_star_against_naive():
    edges = [(0, k) for k in range(1, 5)] + [(k, 0) for k in range(1, 5)]
    g = from_edges([u for u, _ in edges], [v for _, v in edges], 5)
    assert np.allclose(reference_pagerank(g, 2, 0.85), naive_pagerank(edges, 5, 2, 0.85), rtol=0, atol=1e-15)


def test_dangling_contributes_nothing():
    g = from_edges([0], [1], 3)
    s = reference_pagerank(g, 1)
    assert s.sum() < 1.0
    assert np.isclose(reference_pagerank(g, 3, redistribute=True).sum(), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=40))),
    st.integers(1, 4))
def test_pagerank_matches_naive(case, iters):
    n, edges = case
    g = from_edges([u for u, _ in edges], [v for _, v in edges], n)
    assert np.allclose(reference_pagerank(g, iters), naive_pagerank(edges, n, iters, 0.85), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=40))))
def test_redistribute_conserves_mass(case):
    n, edges = case
    g = from_edges([u for u, _ in edges], [v for _, v in edges], n)
    assert np.isclose(reference_pagerank(g, 4, redistribute=True).sum(), 1.0)
