"""Sparsity graphs, chordality, embeddings, clique trees, term assignment."""

import networkx as nx
import numpy as np
import pytest

from rmpc.chordal import (
    SparsityGraph,
    Supernode,
    Term,
    assign_terms,
    build_clique_tree,
    build_sparsity_graph,
    check_running_intersection,
    chordal_embedding,
    is_chordal,
    max_cliques,
    mpc_direction_structure,
)


def plain_nodes(n):
    return tuple(Supernode("x", i, 0, 1) for i in range(n))


def graph_from_edges(n, edges):
    adj = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    return SparsityGraph(nodes=plain_nodes(n), adj=tuple(frozenset(a) for a in adj))


def random_interval_graph(rng, n):
    """Interval graphs are chordal by construction."""
    lo = rng.uniform(0.0, 1.0, n)
    hi = lo + rng.uniform(0.05, 0.5, n)
    edges = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if lo[i] <= hi[j] and lo[j] <= hi[i]
    ]
    return graph_from_edges(n, edges)


@pytest.fixture(scope="module")
def benchmark_terms():
    return mpc_direction_structure(4, 4, 2, 1, (2, 1, 2))


@pytest.fixture(scope="module")
def benchmark_graph(benchmark_terms):
    return build_sparsity_graph(benchmark_terms)


def test_term_scope_becomes_clique():
    a, b, c = plain_nodes(3)
    g = build_sparsity_graph([Term(scope=(a, b, c))])
    assert g.edge_count() == 3
    g2 = build_sparsity_graph([Term(scope=(a, b)), Term(scope=(c,))])
    assert g2.edge_count() == 1


def test_benchmark_graph_structure(benchmark_graph):
    g = benchmark_graph
    assert g.n == 36  # 4 scenarios x (5 states + 4 controls)
    index = {node.label: i for i, node in enumerate(g.nodes)}

    # All eight stage-0 supernodes are pairwise connected.
    stage0 = [index[f"{kind}_0^{j}"] for j in range(1, 5) for kind in ("x", "u")]
    for a in stage0:
        for b in stage0:
            if a != b:
                assert b in g.adj[a]

    # Stage triangles per scenario.
    for j in range(1, 5):
        for k in range(4):
            tri = [index[f"x_{k}^{j}"], index[f"u_{k}^{j}"], index[f"x_{k + 1}^{j}"]]
            for a in tri:
                for b in tri:
                    if a != b:
                        assert b in g.adj[a]

    # Stage-1 control sharing binds scenario pairs (1,2) and (3,4) only.
    assert index["u_1^2"] in g.adj[index["u_1^1"]]
    assert index["u_1^4"] in g.adj[index["u_1^3"]]
    assert index["u_1^3"] not in g.adj[index["u_1^2"]]


def test_is_chordal_small_cases():
    four_cycle = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    ok, peo = is_chordal(four_cycle)
    assert not ok and peo is None

    tree = graph_from_edges(5, [(0, 1), (1, 2), (1, 3), (3, 4)])
    ok, peo = is_chordal(tree)
    assert ok and sorted(peo) == list(range(5))

    complete = graph_from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    ok, _ = is_chordal(complete)
    assert ok


def test_benchmark_graph_is_not_chordal(benchmark_graph):
    ok, _ = is_chordal(benchmark_graph)
    assert not ok


def test_embedding_identity_on_chordal_input():
    g = random_interval_graph(np.random.default_rng(0), 12)
    ok, _ = is_chordal(g)
    assert ok
    emb, order = chordal_embedding(g)
    assert emb is g
    assert sorted(order) == list(range(g.n))


def test_embedding_four_cycle_adds_one_chord():
    four_cycle = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    emb, order = chordal_embedding(four_cycle)
    assert emb.edge_count() == 5
    ok, _ = is_chordal(emb)
    assert ok


@pytest.mark.parametrize("seed", range(20))
def test_embedding_soundness_random_graphs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 18))
    edges = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if rng.uniform() < 0.3
    ]
    g = graph_from_edges(n, edges)
    emb, order = chordal_embedding(g)
    ok, _ = is_chordal(emb)
    assert ok
    for i in range(n):
        assert g.adj[i] <= emb.adj[i]
    # The returned ordering must be a usable elimination ordering.
    max_cliques(emb, order)


def test_max_cliques_small_cases():
    path = graph_from_edges(3, [(0, 1), (1, 2)])
    ok, peo = is_chordal(path)
    assert max_cliques(path, peo) == ((0, 1), (1, 2))

    complete = graph_from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    ok, peo = is_chordal(complete)
    assert max_cliques(complete, peo) == ((0, 1, 2, 3),)

    with pytest.raises(ValueError, match="elimination ordering"):
        max_cliques(path, (0, 1, 1))


@pytest.mark.parametrize("seed", range(15))
def test_max_cliques_match_networkx(seed):
    rng = np.random.default_rng(100 + seed)
    g = random_interval_graph(rng, int(rng.integers(4, 16)))
    ok, peo = is_chordal(g)
    assert ok
    ours = set(max_cliques(g, peo))
    ref = nx.Graph()
    ref.add_nodes_from(range(g.n))
    ref.add_edges_from(g.edges())
    theirs = {tuple(sorted(c)) for c in nx.find_cliques(ref)}
    assert ours == theirs


def test_clique_tree_small_cases():
    single = build_clique_tree(((0, 1, 2),), nodes=plain_nodes(3))
    assert single.parent == (-1,)
    assert single.separators == ((),)

    two = build_clique_tree(((0, 1), (1, 2)), nodes=plain_nodes(3))
    assert sorted(two.parent) == [-1, 0] or sorted(two.parent) == [-1, 1]
    sep = [s for s in two.separators if s]
    assert sep == [(1,)]


@pytest.mark.parametrize("seed", range(100))
def test_running_intersection_random_chordal(seed):
    rng = np.random.default_rng(200 + seed)
    g = random_interval_graph(rng, int(rng.integers(4, 41)))
    ok, peo = is_chordal(g)
    assert ok
    tree = build_clique_tree(max_cliques(g, peo), g)
    assert check_running_intersection(tree)


def test_clique_tree_deterministic(benchmark_graph):
    emb, order = chordal_embedding(benchmark_graph)
    first = build_clique_tree(max_cliques(emb, order), emb)
    second = build_clique_tree(max_cliques(emb, order), emb)
    assert first.cliques == second.cliques
    assert first.parent == second.parent
    assert first.separators == second.separators


def test_benchmark_embedding_and_tree_shape(benchmark_terms, benchmark_graph):
    """Root over all stage-0 blocks, two branch subtrees, four chains."""
    emb, order = chordal_embedding(benchmark_graph)
    ok, _ = is_chordal(emb)
    assert ok
    cliques = max_cliques(emb, order)
    tree = assign_terms(benchmark_terms, build_clique_tree(cliques, emb))
    assert check_running_intersection(tree)

    assert len(tree.roots) == 1
    root = tree.roots[0]
    root_nodes = {tree.nodes[v].label for v in tree.cliques[root]}
    assert root_nodes == {f"{kind}_0^{j}" for j in range(1, 5) for kind in ("x", "u")}

    # Two branch subtrees, each covering two scenarios.
    assert len(tree.children[root]) == 2
    covered = []
    for child in tree.children[root]:
        scen = set()
        stack = [child]
        while stack:
            c = stack.pop()
            scen.update(tree.nodes[v].scenario for v in tree.cliques[c])
            stack.extend(tree.children[c])
        covered.append(sorted(scen))
    assert covered == [[0, 1], [2, 3]]

    # Below the root and the two per-pair split points everything is a chain,
    # and the four chains end in the four terminal states.
    multi = [c for c in range(len(tree.cliques)) if len(tree.children[c]) > 1]
    assert len(multi) == 3 and root in multi
    leaves = [c for c in range(len(tree.cliques)) if not tree.children[c]]
    assert len(leaves) == 4
    terminal_labels = {
        tree.nodes[v].label for c in leaves for v in tree.cliques[c]
    }
    assert {f"x_4^{j}" for j in range(1, 5)} <= terminal_labels

    # Later-stage triangles survive as cliques of the embedding.
    clique_sets = {frozenset(tree.nodes[v].label for v in c) for c in tree.cliques}
    for j in range(1, 5):
        for k in (2, 3):
            assert frozenset({f"x_{k}^{j}", f"u_{k}^{j}", f"x_{k + 1}^{j}"}) in clique_sets

    # Every term scope is covered by its assigned clique.
    for ti, term in enumerate(benchmark_terms):
        ci = tree.assignment[ti]
        members = set(tree.cliques[ci])
        scope = {tree.node_index[node] for node in term.scope}
        assert scope <= members


def test_assignment_prefers_cliques_near_root():
    a, b, c = plain_nodes(3)
    g = build_sparsity_graph([Term(scope=(a, b)), Term(scope=(b, c))])
    ok, peo = is_chordal(g)
    tree = build_clique_tree(max_cliques(g, peo), g)
    root = tree.roots[0]
    shared_term = Term(scope=(b,))
    out = assign_terms([shared_term], tree)
    assert out.assignment[0] == root


def test_assignment_rejects_uncovered_scope():
    a, b, c = plain_nodes(3)
    g = build_sparsity_graph([Term(scope=(a, b)), Term(scope=(b, c))])
    ok, peo = is_chordal(g)
    tree = build_clique_tree(max_cliques(g, peo), g)
    with pytest.raises(ValueError, match="not covered"):
        assign_terms([Term(scope=(a, c), tag="bad")], tree)


def test_single_scenario_terms_make_a_chain():
    terms = mpc_direction_structure(1, 4, 2, 1, ())
    g = build_sparsity_graph(terms)
    ok, peo = is_chordal(g)
    assert ok  # one scenario: banded structure, already chordal
    tree = build_clique_tree(max_cliques(g, peo), g)
    assert all(len(tree.children[c]) <= 1 for c in range(len(tree.cliques)))
