"""Uncertain system description, scenario enumeration, and RQP assembly.

The uncertainty model is a finite set of (A, B, v) realizations per stage up
to the robust horizon; beyond it every stage has a single realization, so the
scenario count stays bounded.  Enumerating the realization choices gives a
scenario tree whose leaves are lexicographically ordered paths; adjacent
scenarios then share the longest possible control prefix, which keeps the
non-anticipativity coupling a chain of pairwise blocks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .rqp import Rqp

__all__ = [
    "Realization",
    "UncertainSystem",
    "ScenarioTree",
    "NonAnticipativity",
    "MpcStructure",
    "enumerate_scenarios",
    "shared_control_count",
    "build_nonanticipativity",
    "assemble_rqp",
]

_PSD_TOL = -1e-10


def _as_matrix(value, rows, cols, name):
    out = np.asarray(value, dtype=float)
    if out.shape != (rows, cols):
        raise ValueError("%s has shape %s, expected (%d, %d)" % (name, out.shape, rows, cols))
    return out


def _as_vector(value, n, name):
    out = np.asarray(value, dtype=float).reshape(-1)
    if out.shape != (n,):
        raise ValueError("%s has length %d, expected %d" % (name, out.size, n))
    return out


def _check_psd(name, mat):
    if mat.size == 0:
        return
    scale = 1.0 + np.max(np.abs(mat))
    if np.max(np.abs(mat - mat.T)) > 1e-10 * scale:
        raise ValueError("%s must be symmetric" % name)
    if np.linalg.eigvalsh(mat)[0] < _PSD_TOL * scale:
        raise ValueError("%s must be positive semidefinite" % name)


@dataclass(frozen=True)
class Realization:
    """One stage-transition candidate x+ = A x + B u + v."""

    A: np.ndarray
    B: np.ndarray
    v: np.ndarray


@dataclass
class UncertainSystem:
    """Robust MPC problem data.

    ``realizations[k]`` lists the stage-k transition candidates; stages past
    the robust horizon ``N_r`` must offer exactly one.  ``Q`` weights the
    stacked stage vector (x_k, u_k), ``S`` the terminal state.  Pointwise
    constraints read C x_k + D u_k <= e[k] for k = 0..N-1.
    """

    n_x: int
    n_u: int
    N: int
    N_r: int
    realizations: list
    Q: np.ndarray
    S: np.ndarray
    C: np.ndarray
    D: np.ndarray
    e: list
    x_bar: np.ndarray

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if not 0 <= self.N_r <= self.N - 1:
            raise ValueError("robust horizon must lie in 0..N-1")
        if len(self.realizations) != self.N:
            raise ValueError("need one realization list per stage 0..N-1")
        checked = []
        for k, stage in enumerate(self.realizations):
            if len(stage) < 1:
                raise ValueError("stage %d has no realizations" % k)
            if k > self.N_r and len(stage) != 1:
                raise ValueError(
                    "stage %d is past the robust horizon and must have exactly"
                    " one realization" % k
                )
            checked.append(
                tuple(
                    Realization(
                        A=_as_matrix(r.A, self.n_x, self.n_x, "A[%d]" % k),
                        B=_as_matrix(r.B, self.n_x, self.n_u, "B[%d]" % k),
                        v=_as_vector(r.v, self.n_x, "v[%d]" % k),
                    )
                    for r in stage
                )
            )
        self.realizations = checked
        self.Q = _as_matrix(self.Q, self.n_x + self.n_u, self.n_x + self.n_u, "Q")
        self.S = _as_matrix(self.S, self.n_x, self.n_x, "S")
        _check_psd("Q", self.Q)
        _check_psd("S", self.S)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, self.n_x)
        q = self.C.shape[0]
        self.D = _as_matrix(self.D, q, self.n_u, "D")
        if len(self.e) != self.N:
            raise ValueError("need one constraint right-hand side per stage")
        self.e = tuple(_as_vector(ek, q, "e[%d]" % k) for k, ek in enumerate(self.e))
        self.x_bar = _as_vector(self.x_bar, self.n_x, "x_bar")

    @property
    def q(self):
        return self.C.shape[0]

    @property
    def branching(self):
        """Realization counts M_0..M_{N_r}."""
        return tuple(len(self.realizations[k]) for k in range(self.N_r + 1))


@dataclass
class ScenarioTree:
    """Enumerated scenarios with resolved stage matrices.

    ``paths[j]`` picks one realization index per stage 0..N_r; ``shared[j]``
    counts the control instances scenarios j and j+1 have in common, which is
    one more than their common path prefix because u_0 is always shared.
    """

    M: int
    paths: tuple
    stage_data: tuple
    shared: tuple

    @property
    def N(self):
        return len(self.stage_data[0])

    @property
    def n_x(self):
        return self.stage_data[0][0].A.shape[0]

    @property
    def n_u(self):
        return self.stage_data[0][0].B.shape[1]


@dataclass
class NonAnticipativity:
    """Pairwise control-matching rows.

    ``u_matrix`` acts on the stacked controls (u^1, ..., u^M); ``padded`` is
    the same map with zero columns inserted at state positions so it acts on
    the full decision vector z.
    """

    rows: int
    u_matrix: np.ndarray
    padded: np.ndarray


def enumerate_scenarios(sys):
    """List all realization paths in lexicographic order."""
    paths = tuple(itertools.product(*(range(m) for m in sys.branching)))
    M = len(paths)
    stage_data = tuple(
        tuple(
            sys.realizations[k][path[k] if k <= sys.N_r else 0]
            for k in range(sys.N)
        )
        for path in paths
    )
    shared = []
    for j in range(M - 1):
        common = 0
        for a, b in zip(paths[j], paths[j + 1]):
            if a != b:
                break
            common += 1
        shared.append(1 + common)
    return ScenarioTree(M=M, paths=paths, stage_data=stage_data, shared=tuple(shared))


def shared_control_count(tree, j):
    """Number of stages where scenarios j and j+1 (1-based) use one control."""
    if not 1 <= j <= tree.M - 1:
        raise IndexError("scenario pair index %d out of range 1..%d" % (j, tree.M - 1))
    return tree.shared[j - 1]


def build_nonanticipativity(tree, n_u):
    N = tree.N
    n_x = tree.n_x
    rows = n_u * sum(tree.shared)
    u_matrix = np.zeros((rows, tree.M * N * n_u))
    per_scen = n_x * (N + 1) + n_u * N
    padded = np.zeros((rows, tree.M * per_scen))
    row = 0
    for j, count in enumerate(tree.shared):
        for k in range(count):
            for i in range(n_u):
                u_matrix[row, (j * N + k) * n_u + i] = 1.0
                u_matrix[row, ((j + 1) * N + k) * n_u + i] = -1.0
                zcol = k * (n_x + n_u) + n_x + i
                padded[row, j * per_scen + zcol] = 1.0
                padded[row, (j + 1) * per_scen + zcol] = -1.0
                row += 1
    return NonAnticipativity(rows=rows, u_matrix=u_matrix, padded=padded)


@dataclass
class MpcStructure:
    """Scenario-tree bookkeeping carried on the assembled Rqp."""

    tree: ScenarioTree
    sys: UncertainSystem
    nonant: NonAnticipativity

    @property
    def dynamics_rows(self):
        """Equality rows before the control-coupling block."""
        return self.tree.M * self.sys.n_x * (self.sys.N + 1)


def assemble_rqp(tree, sys):
    """Stack the per-scenario dynamics and costs into one epigraph program.

    Every scenario contributes the stage chain Q, ..., Q, S and the banded
    dynamics rows (initial-state pin, then x_{k+1} - A x_k - B u_k = v_k);
    the padded non-anticipativity rows are appended below the block diagonal.
    """
    n_x, n_u, N, M = sys.n_x, sys.n_u, sys.N, tree.M
    stage_dims = ((n_x + n_u),) * N + (n_x,)
    per_scen = sum(stage_dims)
    nonant = build_nonanticipativity(tree, n_u)

    dyn_rows = n_x * (N + 1)
    A_eq = np.zeros((M * dyn_rows + nonant.rows, M * per_scen))
    b = np.zeros(M * dyn_rows + nonant.rows)
    for j in range(M):
        r0 = j * dyn_rows
        c0 = j * per_scen
        A_eq[r0 : r0 + n_x, c0 : c0 + n_x] = np.eye(n_x)
        b[r0 : r0 + n_x] = sys.x_bar
        for k in range(N):
            real = tree.stage_data[j][k]
            rk = r0 + (k + 1) * n_x
            ck = c0 + k * (n_x + n_u)
            A_eq[rk : rk + n_x, ck : ck + n_x] = -real.A
            A_eq[rk : rk + n_x, ck + n_x : ck + n_x + n_u] = -real.B
            A_eq[rk : rk + n_x, ck + n_x + n_u : ck + 2 * n_x + n_u] = np.eye(n_x)
            b[rk : rk + n_x] = real.v
    if nonant.rows:
        A_eq[M * dyn_rows :] = nonant.padded

    q = sys.q
    G_ineq = np.zeros((M * N * q, M * per_scen))
    d = np.zeros(M * N * q)
    for j in range(M):
        for k in range(N):
            r0 = (j * N + k) * q
            c0 = j * per_scen + k * (n_x + n_u)
            G_ineq[r0 : r0 + q, c0 : c0 + n_x] = sys.C
            G_ineq[r0 : r0 + q, c0 + n_x : c0 + n_x + n_u] = sys.D
            d[r0 : r0 + q] = sys.e[k]

    Q_blocks = [[sys.Q] * N + [sys.S] for _ in range(M)]
    return Rqp(
        M=M,
        N=N,
        stage_dims=stage_dims,
        Q_blocks=Q_blocks,
        A_eq=A_eq,
        b=b,
        G_ineq=G_ineq,
        d=d,
        structure=MpcStructure(tree=tree, sys=sys, nonant=nonant),
    )
