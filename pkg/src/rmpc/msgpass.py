"""Clique-tree message passing for the condensed direction system.

The direction system is solved in extended form: alongside the decision
coordinates it keeps the epigraph direction scalars (the bound variable and
the per-scenario chain variables), because the quadratic coupling they induce
is local per stage while their elimination would densify the cross-scenario
blocks.  Scalar coordinates are numbered globally: 0..n_z-1 for the decision
vector, n_z for the bound, then the chain variables scenario-major.

Each clique owns a local quadratic, a linear term, and equality rows.  The
upward pass eliminates every non-root clique's private variables
parametrically in its separator and sends the resulting quadratic value
function to the parent; equality rows with no private support, and rows that
are locally redundant over the private columns, are transferred (the latter
reduced against a pivot subset), keeping their global row identity so
multipliers come back in the original order.  Children are absorbed in fixed
child-index order, which
makes results bitwise identical for any worker count.  The downward pass
replays the stored affine recovery maps.
"""

from __future__ import annotations

import os
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve, qr

from .chordal import (
    Supernode,
    assign_terms,
    build_clique_tree,
    build_sparsity_graph,
    chordal_embedding,
    max_cliques,
    mpc_direction_structure,
)

__all__ = [
    "LocalProblem",
    "Message",
    "ParametricRecord",
    "DirectionStructure",
    "ChordalFactors",
    "EliminationBreakdown",
    "eliminate_clique",
    "upward_pass",
    "downward_pass",
    "build_direction_structure",
    "assemble_local_problems",
    "solve_reduced_kkt_chordal",
    "resolve_workers",
]

# Rows whose private-column block is below this are transferred, not solved.
_ROW_TOL = 1e-12
# Relative threshold for rank detection among kept rows' private blocks.
_RANK_TOL = 1e-10
_EPS_REG = 1e-10
# Directions are accepted at this residual; past it, a refined result that
# still clears the sanity cap is usable for stepping, since the driver judges
# progress on true residuals each iteration.
_DIR_TOL = 1e-10
_DIR_CAP = 1e-6


class EliminationBreakdown(RuntimeError):
    """Local KKT factorization produced non-finite results."""


def resolve_workers(workers=None):
    """Explicit argument wins, then RMPC_THREADS, then the CPU count."""
    if workers is None or workers == 0:
        env = os.environ.get("RMPC_THREADS", "").strip()
        if env:
            value = int(env)
            if value > 0:
                return value
        return os.cpu_count() or 1
    return max(1, int(workers))


@dataclass
class LocalProblem:
    """Per-clique quadratic piece: ½x'H x - g'x + const subject to E x = f.

    ``scope`` holds ascending global coordinate ids; ``row_ids`` the global
    equality row ids, which survive transfers so multipliers can be returned
    in original order.
    """

    scope: np.ndarray
    H_loc: np.ndarray
    g_loc: np.ndarray
    E_loc: np.ndarray
    f_loc: np.ndarray
    row_ids: np.ndarray
    const: float = 0.0


@dataclass
class Message:
    """Quadratic value function on a separator, plus transferred rows."""

    scope: np.ndarray
    H_msg: np.ndarray
    g_msg: np.ndarray
    const: float
    transferred: tuple


@dataclass
class ParametricRecord:
    """Affine recovery map (private, multipliers) = rhs0 - X @ separator.

    ``lu``, ``X`` and ``H_msg`` depend only on the local matrices, so a
    right-hand-side-only resolve reuses them and refreshes ``rhs0``.  ``keep``
    / ``move`` / ``dep`` index the local rows that were solved here,
    transferred untouched, and reduced against the pivots before transfer;
    ``T`` holds the reduction coefficients so multipliers of the pivot rows
    can be corrected once the reduced rows' multipliers are known.
    """

    private: np.ndarray
    sep: np.ndarray
    row_ids: np.ndarray
    n_p: int
    lu: tuple
    X: np.ndarray
    rhs0: np.ndarray
    H_msg: np.ndarray
    keep: np.ndarray
    move: np.ndarray
    dep: np.ndarray
    dep_ids: np.ndarray
    T: np.ndarray


def eliminate_clique(lp, private, separator, reuse=None):
    """Minimize the local quadratic over the private variables.

    Solves the local equality-constrained KKT system parametrically in the
    separator values.  Equality rows without private support cannot be
    resolved here and are projected onto the separator for the parent.  Rows
    whose private block is linearly dependent on the other kept rows would
    make the local system singular, so only a full-rank pivot subset is
    solved here; each dependent row is reduced against the pivots, which
    cancels its private support, and transferred like a structurally free
    row.  The matching transpose correction is applied to the pivot rows'
    multipliers on the way back down.
    """
    scope = np.asarray(lp.scope)
    priv = np.asarray(private, dtype=np.int64)
    sep = np.asarray(separator, dtype=np.int64)
    pix = np.searchsorted(scope, priv)
    six = np.searchsorted(scope, sep)
    n_p = priv.size

    E, f, ids = lp.E_loc, lp.f_loc, lp.row_ids
    if reuse is None:
        if E.shape[0] and n_p:
            keep_mask = np.max(np.abs(E[:, pix]), axis=1) > _ROW_TOL
        else:
            keep_mask = np.zeros(E.shape[0], dtype=bool)
        keep = np.flatnonzero(keep_mask)
        move = np.flatnonzero(~keep_mask)
        dep = np.zeros(0, dtype=np.int64)
        T = np.zeros((0, keep.size))
        if keep.size:
            r_fac, piv = qr(E[np.ix_(keep, pix)].T, mode="r", pivoting=True)
            diag = np.abs(np.diag(r_fac))
            rank = int(np.count_nonzero(diag > _RANK_TOL * diag[0]))
            if rank < keep.size:
                sel = np.zeros(keep.size, dtype=bool)
                sel[piv[:rank]] = True
                dep = keep[~sel]
                keep = keep[sel]
                T = np.linalg.lstsq(
                    E[np.ix_(keep, pix)].T, E[np.ix_(dep, pix)].T, rcond=None
                )[0].T
    else:
        keep, move, dep, T = reuse.keep, reuse.move, reuse.dep, reuse.T

    H = lp.H_loc
    Hpp = H[np.ix_(pix, pix)]
    Hps = H[np.ix_(pix, six)]
    Hss = H[np.ix_(six, six)]
    Ep = E[np.ix_(keep, pix)]
    Es = E[np.ix_(keep, six)]
    m_k = keep.size

    if reuse is None:
        K = np.zeros((n_p + m_k, n_p + m_k))
        K[:n_p, :n_p] = Hpp
        K[:n_p, n_p:] = Ep.T
        K[n_p:, :n_p] = Ep
        lu = lu_factor(K, check_finite=False)
        X = lu_solve(lu, np.vstack([Hps, Es]), check_finite=False)
        H_msg = Hss - Hps.T @ X[:n_p] - Es.T @ X[n_p:]
        H_msg = 0.5 * (H_msg + H_msg.T)
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(H_msg)):
            raise EliminationBreakdown("singular local KKT block")
    else:
        lu, X, H_msg = reuse.lu, reuse.X, reuse.H_msg

    g_p = lp.g_loc[pix]
    g_s = lp.g_loc[six]
    f_k = f[keep]
    rhs0 = lu_solve(lu, np.concatenate([g_p, f_k]), check_finite=False)
    if not np.all(np.isfinite(rhs0)):
        raise EliminationBreakdown("singular local KKT block")
    a = rhs0[:n_p]
    c = rhs0[n_p:]
    g_msg = g_s - Hps.T @ a - Es.T @ c
    const = lp.const - 0.5 * (g_p @ a + f_k @ c)

    Et, ft, ids_t = E[np.ix_(move, six)], f[move], ids[move]
    if dep.size:
        Et = np.vstack([Et, E[np.ix_(dep, six)] - T @ Es])
        ft = np.concatenate([ft, f[dep] - T @ f_k])
        ids_t = np.concatenate([ids_t, ids[dep]])

    msg = Message(
        scope=sep,
        H_msg=H_msg,
        g_msg=g_msg,
        const=const,
        transferred=(Et, ft, ids_t),
    )
    rec = ParametricRecord(
        private=priv,
        sep=sep,
        row_ids=ids[keep],
        n_p=n_p,
        lu=lu,
        X=X,
        rhs0=rhs0,
        H_msg=H_msg,
        keep=keep,
        move=move,
        dep=dep,
        dep_ids=ids[dep],
        T=T,
    )
    return msg, rec


def _absorb(lp, msg):
    idx = np.searchsorted(lp.scope, msg.scope)
    lp.H_loc[np.ix_(idx, idx)] += msg.H_msg
    lp.g_loc[idx] += msg.g_msg
    lp.const += msg.const
    Et, ft, ids_t = msg.transferred
    if ids_t.size:
        extra = np.zeros((ids_t.size, lp.scope.size))
        extra[:, idx] = Et
        lp.E_loc = np.vstack([lp.E_loc, extra])
        lp.f_loc = np.concatenate([lp.f_loc, ft])
        lp.row_ids = np.concatenate([lp.row_ids, ids_t])
    return lp


def upward_pass(tree, local_problems, workers=None, records=None):
    """Post-order parametric elimination toward the root.

    Each clique absorbs its children's messages in child-index order and then
    eliminates its private variables; the root only absorbs.  ``records``
    from a previous pass switches to the right-hand-side-only path that
    reuses every stored factorization.

    Returns (root LocalProblem, messages, records); entries are indexed by
    clique, with None at the root.
    """
    if len(tree.roots) != 1:
        raise ValueError("message passing needs a single connected tree")
    root = tree.roots[0]
    workers = resolve_workers(workers)
    n = len(tree.cliques)
    messages = [None] * n
    out_records = [None] * n

    def process(c):
        lp = local_problems[c]
        for ch in tree.children[c]:
            lp = _absorb(lp, messages[ch])
        local_problems[c] = lp
        if c == root:
            return
        parent_scope = local_problems[tree.parent[c]].scope
        sep = np.intersect1d(lp.scope, parent_scope)
        priv = np.setdiff1d(lp.scope, sep)
        reuse = records[c] if records is not None else None
        messages[c], out_records[c] = eliminate_clique(lp, priv, sep, reuse=reuse)

    if workers == 1 or n == 1:
        for c in tree.post_order():
            process(c)
    else:
        pending = [len(tree.children[c]) for c in range(n)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(process, c): c for c in range(n) if pending[c] == 0
            }
            while futures:
                done, _ = wait(futures, return_when=FIRST_COMPLETED)
                for fut in done:
                    c = futures.pop(fut)
                    fut.result()
                    p = tree.parent[c]
                    if p >= 0:
                        pending[p] -= 1
                        if pending[p] == 0:
                            futures[pool.submit(process, p)] = p
    return local_problems[root], messages, out_records


def downward_pass(tree, records, root_solution):
    """Recover all variables and multipliers from the stored affine maps.

    ``root_solution`` is (root LocalProblem, root primal values, root row
    multipliers).  Every coordinate is written exactly once.
    """
    root_lp, x_root, rho_root = root_solution
    n_vars = int(root_lp.scope.max()) + 1 if root_lp.scope.size else 0
    n_rows = int(root_lp.row_ids.max()) + 1 if root_lp.row_ids.size else 0
    for rec in records:
        if rec is None:
            continue
        if rec.private.size:
            n_vars = max(n_vars, int(rec.private.max()) + 1)
        if rec.sep.size:
            n_vars = max(n_vars, int(rec.sep.max()) + 1)
        if rec.row_ids.size:
            n_rows = max(n_rows, int(rec.row_ids.max()) + 1)

    values = np.zeros(n_vars)
    mult = np.zeros(n_rows)
    values[root_lp.scope] = x_root
    mult[root_lp.row_ids] = rho_root
    for c in tree.pre_order():
        rec = records[c]
        if rec is None:
            continue
        sol = rec.rhs0 - rec.X @ values[rec.sep]
        values[rec.private] = sol[: rec.n_p]
        rho = sol[rec.n_p :]
        if rec.dep_ids.size:
            # Reduced rows were recovered at an ancestor; undo the reduction.
            rho = rho - rec.T.T @ mult[rec.dep_ids]
        mult[rec.row_ids] = rho
    return values, mult


@dataclass
class DirectionStructure:
    """Static clique-tree data for one assembled problem.

    Built once per problem; per-iteration numbers are filled in by
    assemble_local_problems.  ``scopes`` are extended coordinate ids per
    clique (decision coordinates plus threaded epigraph scalars), ``E_locs``
    the constant equality blocks, ``owned`` the coordinates whose linear term
    each clique carries (each coordinate is owned exactly once).
    """

    graph: object
    embedding: object
    tree: object
    terms: list
    n_z: int
    n_ext: int
    scopes: tuple
    E_locs: tuple
    row_ids: tuple
    owned_local: tuple
    owned_global: tuple
    stage_items: tuple
    terminal_items: tuple
    stage_cost: np.ndarray
    terminal_cost: np.ndarray
    cd_rows: np.ndarray


def _steiner_union(tree, members):
    """All cliques on paths between the given cliques (tree is rooted)."""
    members = sorted(members)
    base = members[0]
    covered = set(members)
    for c in members[1:]:
        a, b = c, base
        while a != b:
            if tree.depth[a] >= tree.depth[b]:
                covered.add(a)
                a = tree.parent[a]
            else:
                covered.add(b)
                b = tree.parent[b]
        covered.add(a)
    return covered


def build_direction_structure(rqp):
    """Chordal decomposition of an assembled problem's direction system.

    Builds the sparsity graph over state/control supernodes, embeds it,
    extracts the clique tree, assigns terms, and threads each epigraph scalar
    through the subtree spanning the cliques whose terms reference it.
    """
    st = rqp.structure
    if st is None:
        raise ValueError("chordal decomposition needs scenario-tree structure")
    sys, tree_sc = st.sys, st.tree
    M, N, n_x, n_u, q = tree_sc.M, sys.N, sys.n_x, sys.n_u, sys.q
    n_z = rqp.n_z

    terms = mpc_direction_structure(M, N, n_x, n_u, tree_sc.shared)
    graph = build_sparsity_graph(terms)
    embedding, order = chordal_embedding(graph)
    cliques = max_cliques(embedding, order)
    ctree = assign_terms(terms, build_clique_tree(cliques, embedding))

    def node_coords(node):
        base = rqp.z_offset(node.scenario, node.stage)
        if node.kind == "u":
            base += n_x
        return range(base, base + node.dim)

    tau_id = n_z

    def t_id(j, k):
        return n_z + j * N + k

    # Epigraph scalar -> cliques whose terms reference it.
    eta_refs = {}
    term_clique = [ctree.assignment[ti] for ti in range(len(terms))]
    for ti, term in enumerate(terms):
        tag = term.tag
        if tag[0] == "stage":
            _, j, k = tag
            prev = tau_id if k == 0 else t_id(j, k)
            eta_refs.setdefault(prev, set()).add(term_clique[ti])
            eta_refs.setdefault(t_id(j, k + 1), set()).add(term_clique[ti])
        elif tag[0] == "terminal":
            eta_refs.setdefault(t_id(tag[1], N), set()).add(term_clique[ti])

    n_cl = len(ctree.cliques)
    ext = [set() for _ in range(n_cl)]
    for ci, clique in enumerate(ctree.cliques):
        for v in clique:
            ext[ci].update(node_coords(ctree.nodes[v]))
    for eta, refs in eta_refs.items():
        for ci in _steiner_union(ctree, refs):
            ext[ci].add(eta)
    scopes = tuple(np.array(sorted(s), dtype=np.int64) for s in ext)

    # Linear-term ownership: lowest-index clique containing the coordinate.
    owner = {}
    for ci in range(n_cl):
        for coord in scopes[ci]:
            owner.setdefault(int(coord), ci)
    owned_local, owned_global = [], []
    for ci in range(n_cl):
        mine = [i for i, coord in enumerate(scopes[ci]) if owner[int(coord)] == ci]
        owned_local.append(np.array(mine, dtype=np.int64))
        owned_global.append(scopes[ci][mine])

    dyn = n_x * (N + 1)
    nonant_base = M * dyn
    shared_off = np.concatenate([[0], np.cumsum(tree_sc.shared)]).astype(int)

    pos_maps = [
        {int(coord): i for i, coord in enumerate(scopes[ci])} for ci in range(n_cl)
    ]

    stage_items = [[] for _ in range(n_cl)]
    terminal_items = [[] for _ in range(n_cl)]
    eq_rows = [[] for _ in range(n_cl)]
    eq_ids = [[] for _ in range(n_cl)]

    def local_ix(ci, coords):
        pos = pos_maps[ci]
        return np.array([pos[int(c)] for c in coords], dtype=np.int64)

    for ti, term in enumerate(terms):
        ci = term_clique[ti]
        pos = pos_maps[ci]
        width = scopes[ci].size
        tag = term.tag
        if tag[0] == "stage0":
            for j in range(M):
                rows = np.zeros((n_x, width))
                rows[:, local_ix(ci, node_coords(Supernode("x", 0, j, n_x)))] = np.eye(n_x)
                eq_rows[ci].append(rows)
                eq_ids[ci].append(np.arange(j * dyn, j * dyn + n_x))
            for p in range(M - 1):
                u_a = local_ix(ci, range(rqp.z_offset(p, 0) + n_x, rqp.z_offset(p, 0) + n_x + n_u))
                u_b = local_ix(ci, range(rqp.z_offset(p + 1, 0) + n_x, rqp.z_offset(p + 1, 0) + n_x + n_u))
                rows = np.zeros((n_u, width))
                rows[np.arange(n_u), u_a] = 1.0
                rows[np.arange(n_u), u_b] = -1.0
                eq_rows[ci].append(rows)
                eq_ids[ci].append(nonant_base + shared_off[p] * n_u + np.arange(n_u))
        elif tag[0] == "stage":
            _, j, k = tag
            r = j * (N + 1) + k
            zlo = rqp.z_offset(j, k)
            ix_xu = local_ix(ci, range(zlo, zlo + n_x + n_u))
            ix_xn = local_ix(ci, range(rqp.z_offset(j, k + 1), rqp.z_offset(j, k + 1) + n_x))
            prev = tau_id if k == 0 else t_id(j, k)
            idx = np.concatenate([ix_xu, [pos[prev], pos[t_id(j, k + 1)]]])
            stage_items[ci].append((r, ix_xu, idx, zlo, zlo + n_x + n_u, (j * N + k) * q, (j * N + k + 1) * q))
            real = tree_sc.stage_data[j][k]
            rows = np.zeros((n_x, width))
            rows[:, ix_xu[:n_x]] = -real.A
            rows[:, ix_xu[n_x:]] = -real.B
            rows[:, ix_xn] = np.eye(n_x)
            eq_rows[ci].append(rows)
            eq_ids[ci].append(j * dyn + (k + 1) * n_x + np.arange(n_x))
        elif tag[0] == "terminal":
            j = tag[1]
            r = j * (N + 1) + N
            zlo = rqp.z_offset(j, N)
            ix_x = local_ix(ci, range(zlo, zlo + n_x))
            idx = np.concatenate([ix_x, [pos[t_id(j, N)]]])
            terminal_items[ci].append((r, ix_x, idx, zlo, zlo + n_x))
        elif tag[0] == "nonant":
            _, p, k = tag
            u_a = local_ix(ci, range(rqp.z_offset(p, k) + n_x, rqp.z_offset(p, k) + n_x + n_u))
            u_b = local_ix(ci, range(rqp.z_offset(p + 1, k) + n_x, rqp.z_offset(p + 1, k) + n_x + n_u))
            rows = np.zeros((n_u, width))
            rows[np.arange(n_u), u_a] = 1.0
            rows[np.arange(n_u), u_b] = -1.0
            eq_rows[ci].append(rows)
            eq_ids[ci].append(nonant_base + (shared_off[p] + k) * n_u + np.arange(n_u))

    E_locs, row_ids = [], []
    for ci in range(n_cl):
        if eq_rows[ci]:
            E_locs.append(np.vstack(eq_rows[ci]))
            row_ids.append(np.concatenate(eq_ids[ci]).astype(np.int64))
        else:
            E_locs.append(np.zeros((0, scopes[ci].size)))
            row_ids.append(np.zeros(0, dtype=np.int64))

    all_rows = np.sort(np.concatenate(row_ids))
    if not np.array_equal(all_rows, np.arange(rqp.m_eq)):
        raise AssertionError("equality rows not routed exactly once")

    return DirectionStructure(
        graph=graph,
        embedding=embedding,
        tree=ctree,
        terms=terms,
        n_z=n_z,
        n_ext=n_z + 1 + M * N,
        scopes=scopes,
        E_locs=tuple(E_locs),
        row_ids=tuple(row_ids),
        owned_local=tuple(owned_local),
        owned_global=tuple(owned_global),
        stage_items=tuple(tuple(items) for items in stage_items),
        terminal_items=tuple(tuple(items) for items in terminal_items),
        stage_cost=np.asarray(sys.Q, dtype=float),
        terminal_cost=np.asarray(sys.S, dtype=float),
        cd_rows=np.hstack([sys.C, sys.D]) if q else np.zeros((0, n_x + n_u)),
    )


def assemble_local_problems(red, struct, eps=0.0):
    """Fill per-clique numbers for one linearization of the KKT system.

    The extended quadratic decomposes exactly: per stage, the multiplier-
    weighted cost block, a rank-one row congruence coupling the stage block
    to its two epigraph scalars, and the inequality congruence.  ``eps`` adds
    diagonal regularization at owned coordinates only, so the global effect
    is exactly eps times the identity.
    """
    it = red.iterate
    g_ext = np.concatenate([red.rtilde_mu, red.rhs_eta])
    pm = np.array([-1.0, 1.0])
    cd = struct.cd_rows
    q = cd.shape[0]
    out = []
    for ci, scope in enumerate(struct.scopes):
        width = scope.size
        H = np.zeros((width, width))
        g = np.zeros(width)
        for r, ix_xu, idx, zlo, zhi, qlo, qhi in struct.stage_items[ci]:
            H[np.ix_(ix_xu, ix_xu)] += it.mu[r] * struct.stage_cost
            vals = np.concatenate([red.qz[zlo:zhi], pm])
            H[np.ix_(idx, idx)] += red.mu_over_s[r] * np.outer(vals, vals)
            if q:
                weights = red.nu_over_w[qlo:qhi]
                H[np.ix_(ix_xu, ix_xu)] += cd.T @ (weights[:, None] * cd)
        for r, ix_x, idx, zlo, zhi in struct.terminal_items[ci]:
            H[np.ix_(ix_x, ix_x)] += it.mu[r] * struct.terminal_cost
            vals = np.concatenate([red.qz[zlo:zhi], [-1.0]])
            H[np.ix_(idx, idx)] += red.mu_over_s[r] * np.outer(vals, vals)
        ol = struct.owned_local[ci]
        g[ol] = g_ext[struct.owned_global[ci]]
        if eps:
            H[ol, ol] += eps
        out.append(
            LocalProblem(
                scope=scope,
                H_loc=H,
                g_loc=g,
                E_loc=struct.E_locs[ci],
                f_loc=red.rhs_lambda[struct.row_ids[ci]],
                row_ids=struct.row_ids[ci],
            )
        )
    return out


@dataclass
class ChordalFactors:
    """Reusable factorizations from one chordal solve."""

    records: list
    root_lu: tuple
    root_value: float
    values: np.ndarray
    eps: float


def _solve_root(root_lp, reuse_lu=None):
    n = root_lp.scope.size
    m = root_lp.row_ids.size
    if reuse_lu is None:
        K = np.zeros((n + m, n + m))
        K[:n, :n] = root_lp.H_loc
        K[:n, n:] = root_lp.E_loc.T
        K[n:, :n] = root_lp.E_loc
        lu = lu_factor(K, check_finite=False)
    else:
        lu = reuse_lu
    sol = lu_solve(lu, np.concatenate([root_lp.g_loc, root_lp.f_loc]), check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise EliminationBreakdown("singular root KKT block")
    x = sol[:n]
    value = 0.5 * x @ (root_lp.H_loc @ x) - root_lp.g_loc @ x + root_lp.const
    return x, sol[n:], lu, value


class _ExtendedResidual:
    """Extended-system residual accumulated clique by clique in longdouble.

    Refinement stalls when residuals are computed at working precision on
    badly conditioned systems, so the matrix pieces are cast once and every
    product runs in extended precision.  The per-clique quadratics partition
    the extended quadratic exactly and the equality rows are routed exactly
    once, so scattering local products reproduces the global residual.
    """

    def __init__(self, red, struct):
        lps = assemble_local_problems(red, struct, eps=0.0)
        self.pieces = [
            (lp.scope, lp.H_loc.astype(np.longdouble), lp.E_loc.astype(np.longdouble), lp.row_ids)
            for lp in lps
        ]
        self.g = np.concatenate([red.rtilde_mu, red.rhs_eta]).astype(np.longdouble)
        self.f = red.rhs_lambda.astype(np.longdouble)

    def __call__(self, values, mult):
        rho_g = self.g.copy()
        rho_f = self.f.copy()
        for scope, H_loc, E_loc, row_ids in self.pieces:
            x = values[scope]
            rho_g[scope] -= H_loc @ x
            if row_ids.size:
                rho_g[scope] -= E_loc.T @ mult[row_ids]
                rho_f[row_ids] -= E_loc @ x
        return rho_g, rho_f


def solve_reduced_kkt_chordal(red, struct, workers=None, reuse=None):
    """Solve the condensed direction system by clique-tree message passing.

    Returns (d_z, d_lambda, factors).  The result is checked against the
    condensed system matrix-free.  As complementarity products spread over
    many orders of magnitude the clique-local sweeps lose digits (they cannot
    pivot across cliques), so iterative-refinement passes, each a cheap
    right-hand-side-only replay of the stored factorizations, run until the
    residual stops improving; refinement is not monotone pass by pass, so the
    best result seen is kept.  If the floor stays above the acceptance
    threshold, one retry with diagonal regularization scaled to the matrix
    magnitude is attempted; a conditioning-limited floor below the sanity cap
    is then still returned, while anything worse raises.  ``reuse`` switches
    every factorization to the stored ones, valid when only right-hand sides
    changed since the pass that produced it.
    """

    def attempt(red_in, eps, factors_in):
        local_problems = assemble_local_problems(red_in, struct, eps=eps)
        records = factors_in.records if factors_in is not None else None
        root_lu = factors_in.root_lu if factors_in is not None else None
        root_lp, _, out_records = upward_pass(
            struct.tree, local_problems, workers=workers, records=records
        )
        x, rho, lu, value = _solve_root(root_lp, reuse_lu=root_lu)
        values, mult = downward_pass(struct.tree, out_records, (root_lp, x, rho))
        if values.size < struct.n_ext:
            values = np.concatenate([values, np.zeros(struct.n_ext - values.size)])
        if mult.size < red.rqp.m_eq:
            mult = np.concatenate([mult, np.zeros(red.rqp.m_eq - mult.size)])
        factors = ChordalFactors(
            records=out_records, root_lu=lu, root_value=value, values=values, eps=eps
        )
        return values, mult, factors

    def refine(values, mult, factors):
        resid = red.reduced_residual(values[: struct.n_z], mult)
        best = (values, mult, factors, resid)
        worse = 0
        residual_at = None
        acc_v = acc_m = None
        for _ in range(8):
            if resid <= 1e-13:
                break
            if residual_at is None:
                residual_at = _ExtendedResidual(red, struct)
                acc_v = values.astype(np.longdouble)
                acc_m = mult.astype(np.longdouble)
            rho_g, rho_f = residual_at(acc_v, acc_m)
            red_r = replace(
                red,
                rtilde_mu=np.asarray(rho_g[: struct.n_z], dtype=np.float64),
                rhs_eta=np.asarray(rho_g[struct.n_z :], dtype=np.float64),
                rhs_lambda=np.asarray(rho_f, dtype=np.float64),
            )
            dv, dm, f2 = attempt(red_r, factors.eps, factors)
            acc_v = acc_v + dv
            acc_m = acc_m + dm
            values = np.asarray(acc_v, dtype=np.float64)
            mult = np.asarray(acc_m, dtype=np.float64)
            resid = red.reduced_residual(values[: struct.n_z], mult)
            if not np.isfinite(resid):
                break
            factors = ChordalFactors(
                records=f2.records,
                root_lu=f2.root_lu,
                root_value=factors.root_value,
                values=values,
                eps=factors.eps,
            )
            if resid < best[3]:
                best = (values, mult, factors, resid)
                worse = 0
            else:
                worse += 1
                if worse >= 2:
                    break
        return best

    if reuse is not None:
        values, mult, factors, resid = refine(*attempt(red, reuse.eps, reuse))
        if resid > _DIR_CAP:
            raise EliminationBreakdown(
                f"direction residual {resid:.3e} above cap on reuse path"
            )
        return values[: struct.n_z], mult, factors

    best = None
    try:
        values, mult, factors, resid = refine(*attempt(red, 0.0, None))
        if resid <= _DIR_TOL:
            return values[: struct.n_z], mult, factors
        best = (values, mult, factors, resid)
    except EliminationBreakdown:
        pass
    eps = _EPS_REG * (1.0 + float(np.max(red.mu_over_s, initial=0.0)))
    values, mult, factors, resid = refine(*attempt(red, eps, None))
    if best is not None and best[3] < resid:
        values, mult, factors, resid = best
    if resid > _DIR_CAP:
        raise EliminationBreakdown(
            f"direction residual {resid:.3e} above cap after regularized retry"
        )
    return values[: struct.n_z], mult, factors
