"""Epigraph reformulation of the min-max MPC problem and its KKT algebra.

The solver works on ``min tau`` subject to, per scenario, a chain of stage
inequalities ``0.5 z_k' Q_k z_k + t_(k+1) <= t_k`` (with ``tau`` bounding the
head of each chain and the terminal row closing it), linear dynamics
equalities, and pointwise inequality rows.  This module owns the iterate
layout, the KKT residual blocks, and the block elimination that condenses one
interior-point linearization down to a symmetric saddle system in
``(d_z, d_lambda)``; the eliminated blocks are recovered afterwards in closed
form.

All right-hand-side formulas here were derived from the linearized KKT
system and are validated by ``verify_direction``, which substitutes a
direction back into all eight linearized equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels

__all__ = [
    "Rqp",
    "EpigraphOperators",
    "Iterate",
    "StepDirection",
    "Residuals",
    "ReducedKkt",
    "assemble_epigraph_operators",
    "kkt_residuals",
    "build_reduced_kkt",
    "recover_step",
    "verify_direction",
]


@dataclass
class Rqp:
    """Assembled epigraph problem data.

    Parameters
    ----------
    M, N : int
        Scenario count and horizon length.
    stage_dims : tuple of int
        Dimensions of the decision blocks z_0 .. z_N of one scenario
        (state+control for k < N, state only at k = N).
    Q_blocks : list of list of ndarray
        Cost blocks indexed [scenario][stage]; entries may share storage.
    A_eq, b : ndarray
        Equality rows: per-scenario initial-state and dynamics rows first,
        scenario-coupling rows appended below.
    G_ineq, d : ndarray
        Pointwise inequality rows (G_ineq z <= d).
    structure : object, optional
        Scenario-tree bookkeeping attached by the model layer; the generic
        algebra below never touches it.
    """

    M: int
    N: int
    stage_dims: tuple
    Q_blocks: list
    A_eq: np.ndarray
    b: np.ndarray
    G_ineq: np.ndarray
    d: np.ndarray
    structure: object = None

    def __post_init__(self):
        self.stage_dims = tuple(int(s) for s in self.stage_dims)
        if len(self.stage_dims) != self.N + 1:
            raise ValueError("stage_dims must have N+1 entries")
        self.A_eq = np.asarray(self.A_eq, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.G_ineq = np.asarray(self.G_ineq, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.A_eq.shape != (self.b.size, self.n_z):
            raise ValueError("A_eq/b shape mismatch with decision dimension")
        if self.G_ineq.shape != (self.d.size, self.n_z):
            raise ValueError("G_ineq/d shape mismatch with decision dimension")
        if len(self.Q_blocks) != self.M:
            raise ValueError("Q_blocks must have one row of blocks per scenario")
        for j in range(self.M):
            if len(self.Q_blocks[j]) != self.N + 1:
                raise ValueError("Q_blocks[%d] must have N+1 stages" % j)
            for k, dim in enumerate(self.stage_dims):
                Q = np.asarray(self.Q_blocks[j][k], dtype=float)
                if Q.shape != (dim, dim):
                    raise ValueError(
                        "Q_blocks[%d][%d] has shape %s, expected (%d, %d)"
                        % (j, k, Q.shape, dim, dim)
                    )
                self.Q_blocks[j][k] = Q

    @property
    def per_scenario_dim(self):
        return sum(self.stage_dims)

    @property
    def n_z(self):
        return self.M * self.per_scenario_dim

    @property
    def n_rows(self):
        """Number of epigraph inequality rows, M * (N + 1)."""
        return self.M * (self.N + 1)

    @property
    def n_t(self):
        return self.M * self.N

    @property
    def n_eta(self):
        """Dimension of the (bound, chain) variable group: 1 + M*N."""
        return 1 + self.M * self.N

    @property
    def m_eq(self):
        return self.b.size

    @property
    def m_ineq(self):
        return self.d.size

    @cached_property
    def z_dims(self):
        """Block dimensions indexed (scenario, stage); identical across scenarios."""
        return tuple(self.stage_dims for _ in range(self.M))

    def z_offset(self, j, k):
        return j * self.per_scenario_dim + self._prefix[k]

    def z_slice(self, j, k):
        lo = self.z_offset(j, k)
        return slice(lo, lo + self.stage_dims[k])

    @cached_property
    def _prefix(self):
        p = [0]
        for dim in self.stage_dims:
            p.append(p[-1] + dim)
        return tuple(p)

    @cached_property
    def packed(self):
        """(blk_starts, qflat, qoff) flat views consumed by the kernels."""
        starts = np.empty(self.n_rows + 1, dtype=np.int64)
        qoff = np.empty(self.n_rows + 1, dtype=np.int64)
        starts[0] = 0
        qoff[0] = 0
        pieces = []
        r = 0
        for j in range(self.M):
            for k in range(self.N + 1):
                dim = self.stage_dims[k]
                starts[r + 1] = starts[r] + dim
                qoff[r + 1] = qoff[r] + dim * dim
                pieces.append(np.ascontiguousarray(self.Q_blocks[j][k]).ravel())
                r += 1
        return starts, np.concatenate(pieces), qoff

    def scenario_costs(self, z):
        """Stage-cost sums J_j(z) = sum_k 0.5 z_k' Q_k z_k per scenario."""
        starts, qflat, qoff = self.packed
        per_row = kernels.quad_forms(z, qflat, qoff, starts)
        return per_row.reshape(self.M, self.N + 1).sum(axis=1)


@dataclass
class EpigraphOperators:
    """Dense coefficient operators of the epigraph rows.

    ``beta`` selects the bound variable in each scenario's head row; ``Bchain``
    is the block-diagonal collection of the per-scenario bidiagonal chain
    matrices acting on the stacked auxiliary bounds t.
    """

    beta: np.ndarray
    Bchain: np.ndarray


def assemble_epigraph_operators(M, N):
    n_rows = M * (N + 1)
    beta = np.zeros(n_rows)
    Bchain = np.zeros((n_rows, M * N))
    for j in range(M):
        base = j * (N + 1)
        beta[base] = 1.0
        for c in range(N):
            Bchain[base + c, j * N + c] = 1.0
            Bchain[base + c + 1, j * N + c] = -1.0
    return EpigraphOperators(beta=beta, Bchain=Bchain)


@dataclass
class Iterate:
    """Primal-dual point: (tau, t, z) primal, (mu, nu, lambda) dual, (s, w) slack."""

    tau: float
    t: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    w: np.ndarray

    def step(self, dirn, alpha):
        return Iterate(
            tau=self.tau + alpha * dirn.d_tau,
            t=self.t + alpha * dirn.d_t,
            z=self.z + alpha * dirn.d_z,
            mu=self.mu + alpha * dirn.d_mu,
            nu=self.nu + alpha * dirn.d_nu,
            lam=self.lam + alpha * dirn.d_lambda,
            s=self.s + alpha * dirn.d_s,
            w=self.w + alpha * dirn.d_w,
        )


@dataclass
class StepDirection:
    d_tau: float
    d_t: np.ndarray
    d_z: np.ndarray
    d_mu: np.ndarray
    d_nu: np.ndarray
    d_lambda: np.ndarray
    d_s: np.ndarray
    d_w: np.ndarray


@dataclass
class Residuals:
    """The eight KKT blocks, evaluated as functions (zero at a solution).

    ``r_mu_stat`` is stationarity in z; ``r_lambda`` and ``r_nu`` are the
    equality and inequality primal blocks; ``r_s`` and ``r_w`` are the
    complementarity products with the centering (and, for a corrector pass,
    the cross-term) already folded in.
    """

    r_tau: float
    r_t: np.ndarray
    r_mu_stat: np.ndarray
    r_epi: np.ndarray
    r_lambda: np.ndarray
    r_nu: np.ndarray
    r_s: np.ndarray
    r_w: np.ndarray

    def block_norms(self):
        inf = lambda v: float(np.max(np.abs(v))) if np.size(v) else 0.0
        return {
            "tau": abs(self.r_tau),
            "t": inf(self.r_t),
            "mu_stat": inf(self.r_mu_stat),
            "epi": inf(self.r_epi),
            "lambda": inf(self.r_lambda),
            "nu": inf(self.r_nu),
            "s": inf(self.r_s),
            "w": inf(self.r_w),
        }


def kkt_residuals(rqp, it, centering=0.0):
    """Evaluate the eight KKT blocks at ``it`` with a centering offset.

    The multiplier sum block is ``1 - beta' mu``; the chain-dual block is the
    adjoint chain product; stationarity in z weights each cost block by its
    epigraph multiplier.
    """
    starts, qflat, qoff = rqp.packed
    qz = kernels.block_matvec(it.z, qflat, qoff, starts)
    quad = kernels.quad_forms(it.z, qflat, qoff, starts)
    chain = kernels.chain_apply(it.tau, it.t, rqp.M, rqp.N)
    eta = kernels.eta_products(it.mu, rqp.M, rqp.N)
    stat = kernels.scale_blocks(qz, it.mu, starts) + rqp.A_eq.T @ it.lam
    if rqp.m_ineq:
        stat += rqp.G_ineq.T @ it.nu
    return Residuals(
        r_tau=1.0 + eta[0],
        r_t=eta[1:].copy(),
        r_mu_stat=stat,
        r_epi=quad + chain + it.s,
        r_lambda=rqp.A_eq @ it.z - rqp.b,
        r_nu=rqp.G_ineq @ it.z + it.w - rqp.d,
        r_s=it.mu * it.s - centering,
        r_w=it.nu * it.w - centering,
    )


@dataclass
class ReducedKkt:
    """One linearization, condensed.

    Eliminating the slack and complementarity blocks and then the epigraph
    direction group eta = (d_tau, d_t) leaves the saddle system

        [H      A_eq'] [d_z]      [rhs_z]
        [A_eq   0    ] [d_lam]  = [rhs_lambda]

    with ``H = z_quad - cross @ eta_gram^-1 @ cross'``.  The workspace keeps
    every eliminated quantity so the full direction is recoverable and so the
    chordal backend can rebuild the pre-elimination quadratic exactly.
    """

    rqp: Rqp
    iterate: Iterate
    mu_over_s: np.ndarray
    nu_over_w: np.ndarray
    qz: np.ndarray
    eta_gram: np.ndarray
    eta_chol: tuple
    cross: np.ndarray
    rbar_mu: np.ndarray
    rbar_epi: np.ndarray
    rtilde_mu: np.ndarray
    rhs_eta: np.ndarray
    rhs_z: np.ndarray
    rhs_lambda: np.ndarray
    nr_s: np.ndarray
    nr_w: np.ndarray
    nr_nu: np.ndarray

    # Conventional saddle-point names for the workspace pieces.
    @property
    def P(self):
        return self.eta_gram

    @property
    def R(self):
        return self.cross

    @property
    def Q_s(self):
        return self.z_quad

    @cached_property
    def Q_mu(self):
        """Block diagonal of the multiplier-weighted cost blocks."""
        rqp = self.rqp
        out = np.zeros((rqp.n_z, rqp.n_z))
        r = 0
        for j in range(rqp.M):
            for k in range(rqp.N + 1):
                sl = rqp.z_slice(j, k)
                out[sl, sl] = self.iterate.mu[r] * rqp.Q_blocks[j][k]
                r += 1
        return out

    @cached_property
    def z_quad(self):
        """Dense condensed quadratic before the eta elimination."""
        rqp = self.rqp
        H = np.zeros((rqp.n_z, rqp.n_z))
        r = 0
        for j in range(rqp.M):
            for k in range(rqp.N + 1):
                sl = rqp.z_slice(j, k)
                q = self.qz[sl]
                H[sl, sl] = (
                    self.iterate.mu[r] * rqp.Q_blocks[j][k]
                    + self.mu_over_s[r] * np.outer(q, q)
                )
                r += 1
        if rqp.m_ineq:
            H += rqp.G_ineq.T @ (self.nu_over_w[:, None] * rqp.G_ineq)
        return H

    @cached_property
    def H(self):
        Hm = self.z_quad - self.cross @ cho_solve(self.eta_chol, self.cross.T)
        return 0.5 * (Hm + Hm.T)

    def apply_H(self, x):
        """H @ x without materializing H."""
        rqp = self.rqp
        starts, qflat, qoff = rqp.packed
        out = kernels.scale_blocks(
            kernels.block_matvec(x, qflat, qoff, starts), self.iterate.mu, starts
        )
        out += kernels.scale_blocks(
            self.qz, self.mu_over_s * kernels.block_dots(self.qz, x, starts), starts
        )
        if rqp.m_ineq:
            out += rqp.G_ineq.T @ (self.nu_over_w * (rqp.G_ineq @ x))
        out -= self.cross @ cho_solve(self.eta_chol, self.cross.T @ x)
        return out

    def reduced_residual(self, d_z, d_lambda):
        """Relative residual of the condensed saddle system at a direction."""
        r1 = self.apply_H(d_z) + self.rqp.A_eq.T @ d_lambda - self.rhs_z
        r2 = self.rqp.A_eq @ d_z - self.rhs_lambda
        scale = 1.0 + max(
            np.max(np.abs(self.rhs_z)),
            np.max(np.abs(self.rhs_lambda)) if self.rhs_lambda.size else 0.0,
        )
        r2max = np.max(np.abs(r2)) if r2.size else 0.0
        return float(max(np.max(np.abs(r1)), r2max) / scale)

    def with_rhs(self, res):
        """Same matrices and factorization, new residual right-hand sides."""
        return _fill_rhs(replace(self), res)


def _fill_rhs(red, res):
    rqp, it = red.rqp, red.iterate
    starts, _, _ = rqp.packed
    nr_tau = -res.r_tau
    nr_t = -res.r_t
    nr_stat = -res.r_mu_stat
    nr_epi = -res.r_epi
    nr_eq = -res.r_lambda
    nr_nu = -res.r_nu
    nr_s = -res.r_s
    nr_w = -res.r_w

    rbar_mu = nr_stat.copy()
    if rqp.m_ineq:
        rbar_mu -= rqp.G_ineq.T @ ((nr_w - it.nu * nr_nu) / it.w)
    rbar_epi = nr_epi - nr_s / it.mu

    scaled = red.mu_over_s * rbar_epi
    rhs_eta = np.concatenate(([nr_tau], nr_t)) + kernels.eta_products(
        scaled, rqp.M, rqp.N
    )
    rtilde = rbar_mu + kernels.scale_blocks(red.qz, scaled, starts)

    red.rbar_mu = rbar_mu
    red.rbar_epi = rbar_epi
    red.rtilde_mu = rtilde
    red.rhs_eta = rhs_eta
    red.rhs_z = rtilde - red.cross @ cho_solve(red.eta_chol, rhs_eta)
    red.rhs_lambda = nr_eq
    red.nr_s = nr_s
    red.nr_w = nr_w
    red.nr_nu = nr_nu
    return red


def build_reduced_kkt(rqp, it, res):
    """Condense one linearized KKT system.

    The epigraph Gram matrix is positive definite at any interior iterate
    (the coefficient columns have full rank), so a Cholesky factorization is
    taken here and reused by every solve against this linearization.
    """
    starts, qflat, qoff = rqp.packed
    mu_over_s = it.mu / it.s
    nu_over_w = it.nu / it.w if rqp.m_ineq else np.zeros(0)
    qz = kernels.block_matvec(it.z, qflat, qoff, starts)

    eta_gram = kernels.arrow_gram(mu_over_s, rqp.M, rqp.N)
    eta_chol = cho_factor(eta_gram, lower=True)

    cross = np.zeros((rqp.n_z, rqp.n_eta))
    r = 0
    for j in range(rqp.M):
        for k in range(rqp.N + 1):
            sl = rqp.z_slice(j, k)
            v = mu_over_s[r] * qz[sl]
            lo = 0 if k == 0 else j * rqp.N + k
            cross[sl, lo] -= v
            if k < rqp.N:
                cross[sl, 1 + j * rqp.N + k] += v
            r += 1

    red = ReducedKkt(
        rqp=rqp,
        iterate=it,
        mu_over_s=mu_over_s,
        nu_over_w=nu_over_w,
        qz=qz,
        eta_gram=eta_gram,
        eta_chol=eta_chol,
        cross=cross,
        rbar_mu=None,
        rbar_epi=None,
        rtilde_mu=None,
        rhs_eta=None,
        rhs_z=None,
        rhs_lambda=None,
        nr_s=None,
        nr_w=None,
        nr_nu=None,
    )
    return _fill_rhs(red, res)


def recover_step(red, d_z, d_lambda):
    """Extend a saddle-system solution to the full eight-block direction."""
    rqp, it = red.rqp, red.iterate
    starts, _, _ = rqp.packed
    d_eta = cho_solve(red.eta_chol, red.rhs_eta - red.cross.T @ d_z)
    d_tau = float(d_eta[0])
    d_t = d_eta[1:].copy()
    epi_dir = kernels.block_dots(red.qz, d_z, starts) + kernels.chain_apply(
        d_tau, d_t, rqp.M, rqp.N
    )
    d_mu = red.mu_over_s * (epi_dir - red.rbar_epi)
    d_s = (red.nr_s - it.s * d_mu) / it.mu
    if rqp.m_ineq:
        d_w = red.nr_nu - rqp.G_ineq @ d_z
        d_nu = (red.nr_w - it.nu * d_w) / it.w
    else:
        d_w = np.zeros(0)
        d_nu = np.zeros(0)
    return StepDirection(
        d_tau=d_tau,
        d_t=d_t,
        d_z=d_z,
        d_mu=d_mu,
        d_nu=d_nu,
        d_lambda=d_lambda,
        d_s=d_s,
        d_w=d_w,
    )


def verify_direction(rqp, it, res, dirn):
    """Substitute a direction into all eight linearized equations.

    Returns the largest block infinity-norm divided by (1 + the largest
    right-hand-side entry), so an exact direction scores at machine level
    regardless of problem scaling.
    """
    starts, qflat, qoff = rqp.packed
    qz = kernels.block_matvec(it.z, qflat, qoff, starts)

    nr_tau = -res.r_tau
    nr_t = -res.r_t
    nr_stat = -res.r_mu_stat
    nr_epi = -res.r_epi
    nr_eq = -res.r_lambda
    nr_nu = -res.r_nu
    nr_s = -res.r_s
    nr_w = -res.r_w

    eta = kernels.eta_products(dirn.d_mu, rqp.M, rqp.N)
    e1 = eta[0] - nr_tau
    e2 = eta[1:] - nr_t
    e3 = (
        kernels.scale_blocks(
            kernels.block_matvec(dirn.d_z, qflat, qoff, starts), it.mu, starts
        )
        + kernels.scale_blocks(qz, dirn.d_mu, starts)
        + rqp.A_eq.T @ dirn.d_lambda
        - nr_stat
    )
    if rqp.m_ineq:
        e3 += rqp.G_ineq.T @ dirn.d_nu
    e4 = (
        kernels.block_dots(qz, dirn.d_z, starts)
        + kernels.chain_apply(dirn.d_tau, dirn.d_t, rqp.M, rqp.N)
        + dirn.d_s
        - nr_epi
    )
    e5 = rqp.A_eq @ dirn.d_z - nr_eq
    e6 = rqp.G_ineq @ dirn.d_z + dirn.d_w - nr_nu
    e7 = it.mu * dirn.d_s + it.s * dirn.d_mu - nr_s
    e8 = it.nu * dirn.d_w + it.w * dirn.d_nu - nr_w

    inf = lambda v: float(np.max(np.abs(v))) if np.size(v) else 0.0
    worst = max(abs(e1), inf(e2), inf(e3), inf(e4), inf(e5), inf(e6), inf(e7), inf(e8))
    scale = 1.0 + max(
        abs(nr_tau), inf(nr_t), inf(nr_stat), inf(nr_epi),
        inf(nr_eq), inf(nr_nu), inf(nr_s), inf(nr_w),
    )
    return worst / scale
