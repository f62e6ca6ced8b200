"""Chordal analysis of the direction problem's coupling structure.

Variables are grouped into supernodes, one per state or control block of one
scenario and stage.  Objective and constraint terms each touch a small scope
of supernodes; the induced sparsity graph is generally not chordal (the
stage-0 coupling and the later shared-control edges create chordless cycles),
so a greedy minimum-fill embedding is computed first.  Maximal cliques of the
embedding are arranged into a maximum-weight spanning tree, whose running
intersection property is what the message-passing solver relies on.

Everything here is deterministic: ties are always broken by lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

__all__ = [
    "Supernode",
    "SparsityGraph",
    "Term",
    "CliqueTree",
    "build_sparsity_graph",
    "is_chordal",
    "chordal_embedding",
    "max_cliques",
    "build_clique_tree",
    "assign_terms",
    "check_running_intersection",
    "mpc_direction_structure",
    "graph_to_dot",
    "clique_tree_to_dot",
]


@dataclass(frozen=True)
class Supernode:
    """One variable block: kind 'x' or 'u', stage index, scenario index."""

    kind: str
    stage: int
    scenario: int
    dim: int = 1

    @property
    def label(self):
        return "%s_%d^%d" % (self.kind, self.stage, self.scenario + 1)


def _node_key(node):
    return (node.scenario, node.stage, node.kind != "x", node.kind)


@dataclass
class SparsityGraph:
    """Simple undirected graph over supernodes, adjacency by node index."""

    nodes: tuple
    adj: tuple

    @property
    def n(self):
        return len(self.nodes)

    def edges(self):
        for i, nbrs in enumerate(self.adj):
            for j in nbrs:
                if j > i:
                    yield (i, j)

    def edge_count(self):
        return sum(len(a) for a in self.adj) // 2

    @cached_property
    def node_index(self):
        return {node: i for i, node in enumerate(self.nodes)}


@dataclass
class Term:
    """One objective or constraint piece with its supernode scope.

    ``quadratic``/``linear`` act on the concatenated scalar dimensions of the
    scope; ``equalities`` is an optional (rows, rhs, row_ids) triple whose
    row_ids index the originating rows of the global equality system.  Purely
    structural terms leave the numeric fields as None.
    """

    scope: tuple
    quadratic: np.ndarray = None
    linear: np.ndarray = None
    equalities: tuple = None
    tag: object = None

    @property
    def dim(self):
        return sum(node.dim for node in self.scope)


@dataclass
class CliqueTree:
    """Rooted forest of maximal cliques with separators and term assignment."""

    nodes: tuple
    cliques: tuple
    parent: tuple
    separators: tuple
    assignment: dict = None

    @cached_property
    def children(self):
        out = [[] for _ in self.cliques]
        for i, p in enumerate(self.parent):
            if p >= 0:
                out[p].append(i)
        return tuple(tuple(sorted(c)) for c in out)

    @cached_property
    def depth(self):
        d = [0] * len(self.cliques)
        for i in self._topo:
            p = self.parent[i]
            d[i] = 0 if p < 0 else d[p] + 1
        return tuple(d)

    @cached_property
    def roots(self):
        return tuple(i for i, p in enumerate(self.parent) if p < 0)

    @cached_property
    def _topo(self):
        """Parents before children, children visited in ascending order."""
        order = []
        stack = list(reversed(self.roots))
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(reversed(self.children[i]))
        return tuple(order)

    def post_order(self):
        return tuple(reversed(self._topo))

    def pre_order(self):
        return self._topo

    @cached_property
    def node_index(self):
        return {node: i for i, node in enumerate(self.nodes)}


def build_sparsity_graph(terms):
    """Union of term-scope cliques, nodes ordered scenario-major."""
    nodes = sorted({node for term in terms for node in term.scope}, key=_node_key)
    index = {node: i for i, node in enumerate(nodes)}
    adj = [set() for _ in nodes]
    for term in terms:
        ids = [index[node] for node in term.scope]
        for a in ids:
            for b in ids:
                if a != b:
                    adj[a].add(b)
    return SparsityGraph(nodes=tuple(nodes), adj=tuple(frozenset(a) for a in adj))


def _verify_peo(adj, ordering):
    n = len(adj)
    if sorted(ordering) != list(range(n)):
        return False
    pos = [0] * n
    for i, v in enumerate(ordering):
        pos[v] = i
    for i, v in enumerate(ordering):
        later = [u for u in adj[v] if pos[u] > i]
        if not later:
            continue
        first = min(later, key=lambda u: pos[u])
        rest = set(later)
        rest.discard(first)
        if not rest <= set(adj[first]):
            return False
    return True


def is_chordal(g):
    """Maximum-cardinality search; returns (True, elimination order) if chordal.

    The reverse of the visit order is checked for simpliciality, which both
    certifies chordality and yields a usable perfect elimination ordering.
    """
    n = g.n
    if n == 0:
        return True, ()
    weight = [0] * n
    visited = [False] * n
    visit = []
    for _ in range(n):
        best = -1
        for i in range(n):
            if not visited[i] and (best < 0 or weight[i] > weight[best]):
                best = i
        visited[best] = True
        visit.append(best)
        for u in g.adj[best]:
            if not visited[u]:
                weight[u] += 1
    peo = tuple(reversed(visit))
    if _verify_peo(g.adj, peo):
        return True, peo
    return False, None


def chordal_embedding(g):
    """Greedy minimum-fill embedding; identity on already-chordal graphs.

    Returns the filled graph and the elimination ordering used, which is a
    perfect elimination ordering of the filled graph by construction.
    """
    ok, peo = is_chordal(g)
    if ok:
        return g, peo
    adj = [set(a) for a in g.adj]
    remaining = set(range(g.n))
    ordering = []
    while remaining:
        best, best_fill = -1, None
        for v in sorted(remaining):
            nbrs = sorted(adj[v] & remaining)
            fill = 0
            for i, a in enumerate(nbrs):
                for b in nbrs[i + 1 :]:
                    if b not in adj[a]:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
        nbrs = sorted(adj[best] & remaining)
        for i, a in enumerate(nbrs):
            for b in nbrs[i + 1 :]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
        remaining.remove(best)
        ordering.append(best)
    filled = SparsityGraph(nodes=g.nodes, adj=tuple(frozenset(a) for a in adj))
    return filled, tuple(ordering)


def max_cliques(g, ordering):
    """Maximal cliques of a chordal graph from its elimination ordering.

    Candidates are each node together with its later neighbors; non-maximal
    candidates are filtered out.  The result is sorted by member tuple so
    clique indices are reproducible.
    """
    if not _verify_peo(g.adj, tuple(ordering)):
        raise ValueError("ordering is not a perfect elimination ordering")
    pos = [0] * g.n
    for i, v in enumerate(ordering):
        pos[v] = i
    candidates = []
    for i, v in enumerate(ordering):
        cand = frozenset({v} | {u for u in g.adj[v] if pos[u] > i})
        candidates.append(cand)
    unique = sorted(set(candidates), key=lambda c: tuple(sorted(c)))
    maximal = [
        c for c in unique if not any(c < other for other in unique)
    ]
    return tuple(tuple(sorted(c)) for c in maximal)


def _stage0_count(g, clique):
    return sum(1 for i in clique if g.nodes[i].stage == 0)


def build_clique_tree(cliques, g=None, nodes=None):
    """Maximum-weight spanning forest of the clique intersection graph.

    Weights are separator sizes; Kruskal with (weight, index) ordering makes
    the tree deterministic.  Each component is rooted at the clique with the
    most stage-0 supernodes, ties by size then lowest index.
    """
    if nodes is None:
        nodes = g.nodes
    k = len(cliques)
    sets = [frozenset(c) for c in cliques]
    edges = []
    for i in range(k):
        for j in range(i + 1, k):
            w = len(sets[i] & sets[j])
            if w:
                edges.append((w, i, j))
    edges.sort(key=lambda e: (-e[0], e[1], e[2]))

    uf = list(range(k))

    def find(a):
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    tree_adj = [set() for _ in range(k)]
    for w, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            uf[ri] = rj
            tree_adj[i].add(j)
            tree_adj[j].add(i)

    comp = {}
    for i in range(k):
        comp.setdefault(find(i), []).append(i)

    graph_for_stage = SparsityGraph(nodes=tuple(nodes), adj=()) if g is None else g
    parent = [-1] * k
    for members in comp.values():
        root = max(
            members,
            key=lambda i: (_stage0_count(graph_for_stage, cliques[i]), len(cliques[i]), -i),
        )
        seen = {root}
        stack = [root]
        while stack:
            i = stack.pop()
            for j in sorted(tree_adj[i]):
                if j not in seen:
                    seen.add(j)
                    parent[j] = i
                    stack.append(j)

    separators = []
    for i in range(k):
        p = parent[i]
        separators.append(tuple(sorted(sets[i] & sets[p])) if p >= 0 else ())
    return CliqueTree(
        nodes=tuple(nodes),
        cliques=tuple(tuple(sorted(c)) for c in cliques),
        parent=tuple(parent),
        separators=tuple(separators),
    )


def assign_terms(terms, tree):
    """Attach each term to the covering clique closest to its root.

    Ties are broken by lowest clique index.  A term whose scope no clique
    covers means the embedding upstream is broken, which is an error here.
    """
    sets = [frozenset(c) for c in tree.cliques]
    assignment = {}
    for ti, term in enumerate(terms):
        scope = frozenset(tree.node_index[node] for node in term.scope)
        best = None
        for ci, cset in enumerate(sets):
            if scope <= cset:
                key = (tree.depth[ci], ci)
                if best is None or key < best:
                    best = key
        if best is None:
            raise ValueError("term %r not covered by any clique" % (term.tag,))
        assignment[ti] = best[1]
    return replace(tree, assignment=assignment)


def check_running_intersection(tree):
    """True when every supernode's cliques form a connected subtree."""
    containing = {}
    for ci, clique in enumerate(tree.cliques):
        for v in clique:
            containing.setdefault(v, set()).add(ci)
    for v, cset in containing.items():
        start = next(iter(cset))
        seen = {start}
        stack = [start]
        while stack:
            i = stack.pop()
            nbrs = list(tree.children[i])
            if tree.parent[i] >= 0:
                nbrs.append(tree.parent[i])
            for j in nbrs:
                if j in cset and j not in seen:
                    seen.add(j)
                    stack.append(j)
        if seen != cset:
            return False
    return True


def mpc_direction_structure(M, N, n_x, n_u, shared):
    """Structural terms of the coupled direction problem.

    One term per scenario stage (scope x_k, u_k, x_{k+1}) and terminal state,
    a single term over every stage-0 state and control (the initial-state
    pins plus the always-shared u_0 make stage 0 fully coupled), and one term
    per shared later-stage control pair.
    """
    x = lambda j, k: Supernode("x", k, j, n_x)
    u = lambda j, k: Supernode("u", k, j, n_u)
    terms = []
    scope0 = []
    for j in range(M):
        scope0.append(x(j, 0))
        scope0.append(u(j, 0))
    terms.append(Term(scope=tuple(scope0), tag=("stage0",)))
    for j in range(M):
        for k in range(N):
            terms.append(Term(scope=(x(j, k), u(j, k), x(j, k + 1)), tag=("stage", j, k)))
        terms.append(Term(scope=(x(j, N),), tag=("terminal", j)))
    for p, count in enumerate(shared):
        for k in range(1, count):
            terms.append(Term(scope=(u(p, k), u(p + 1, k)), tag=("nonant", p, k)))
    return terms


def graph_to_dot(g, name="sparsity"):
    lines = ["graph %s {" % name]
    for i, node in enumerate(g.nodes):
        lines.append('  n%d [label="%s"];' % (i, node.label))
    for i, j in sorted(g.edges()):
        lines.append("  n%d -- n%d;" % (i, j))
    lines.append("}")
    return "\n".join(lines)


def clique_tree_to_dot(tree, name="cliques"):
    lines = ["graph %s {" % name]
    for ci, clique in enumerate(tree.cliques):
        members = ", ".join(tree.nodes[v].label for v in clique)
        lines.append('  c%d [label="{%s}"];' % (ci, members))
    for ci, p in enumerate(tree.parent):
        if p >= 0:
            lines.append("  c%d -- c%d;" % (p, ci))
    lines.append("}")
    return "\n".join(lines)
