"""Primal-dual interior-point driver for the epigraph program.

Each iteration evaluates the KKT blocks, condenses the linearized system,
obtains (d_z, d_lambda) from the selected backend, and recovers the remaining
direction blocks.  The default is a Mehrotra-style predictor-corrector: the
affine direction fixes the centering parameter and the corrector resolve
reuses every factorization built for the iteration.  A fixed-centering
path-following mode stays available behind a toggle for debugging.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import kernels
from .msgpass import (
    EliminationBreakdown,
    build_direction_structure,
    solve_reduced_kkt_chordal,
)
from .rqp import Iterate, build_reduced_kkt, kkt_residuals, recover_step

__all__ = [
    "IpmOptions",
    "SolveStats",
    "Solution",
    "initial_iterate",
    "step_length",
    "ipm_solve",
]

_FEAS_BLOCKS = ("tau", "t", "mu_stat", "epi", "lambda", "nu")


@dataclass
class IpmOptions:
    """Driver options; ``backend`` selects dense or chordal directions."""

    tol_feas: float = 1e-8
    tol_comp: float = 1e-8
    max_iter: int = 100
    gamma_ftb: float = 0.995
    use_corrector: bool = True
    backend: str = "dense"
    sigma_fixed: float = 0.1
    workers: int | None = None
    keep_iterates: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma_ftb < 1.0:
            raise ValueError("gamma_ftb must lie strictly between 0 and 1")
        if self.tol_feas <= 0.0 or self.tol_comp <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.backend not in ("dense", "chordal"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class SolveStats:
    """Iteration count, per-iteration scaled residuals, and wall time."""

    iterations: int
    residuals: list
    wall_time: float
    iterates: list


@dataclass
class Solution:
    """Solver outcome; ``objective`` is the worst-case bound at the end."""

    status: str
    iterate: Iterate
    objective: float
    per_scenario_costs: np.ndarray
    stats: SolveStats


def initial_iterate(rqp):
    """Strictly interior cold start.

    Decision variables and equality multipliers start at zero, inequality
    and epigraph multipliers at one.  The chain variables descend by a unit
    large enough that every epigraph row has positive slack at z = 0; the
    terminal rows sit exactly on the boundary under that ramp, so slacks are
    clipped below at one, as are the inequality slacks.
    """
    M, N = rqp.M, rqp.N
    d_inf = float(np.max(np.abs(rqp.d))) if rqp.m_ineq else 0.0
    t_unit = 1.0 + d_inf
    tau = N * t_unit + 1.0
    t = np.tile((N - np.arange(1, N + 1)) * t_unit, M)
    s = np.maximum(-kernels.chain_apply(tau, t, M, N), 1.0)
    w = np.maximum(rqp.d, 1.0) if rqp.m_ineq else np.zeros(0)
    return Iterate(
        tau=tau,
        t=t,
        z=np.zeros(rqp.n_z),
        mu=np.ones(rqp.n_rows),
        nu=np.ones(rqp.m_ineq),
        lam=np.zeros(rqp.m_eq),
        s=s,
        w=w,
    )


def step_length(it, dirn, gamma):
    """Fraction-to-boundary step, joint over all positive variables."""
    limit = min(
        kernels.step_scale(it.mu, dirn.d_mu),
        kernels.step_scale(it.s, dirn.d_s),
        kernels.step_scale(it.nu, dirn.d_nu),
        kernels.step_scale(it.w, dirn.d_w),
    )
    return float(min(1.0, gamma * limit))


class _DenseBackend:
    """LU of the condensed saddle matrix, shared by predictor and corrector."""

    def __init__(self):
        self.K = None
        self.lu = None

    def solve(self, red, fresh):
        rqp = red.rqp
        n_z, m_eq = rqp.n_z, rqp.m_eq
        if fresh:
            K = np.zeros((n_z + m_eq, n_z + m_eq))
            K[:n_z, :n_z] = red.H
            K[:n_z, n_z:] = rqp.A_eq.T
            K[n_z:, :n_z] = rqp.A_eq
            self.K = K
            self.lu = lu_factor(K, check_finite=False)
        rhs = np.concatenate([red.rhs_z, red.rhs_lambda])
        sol = lu_solve(self.lu, rhs, check_finite=False)
        # one refinement pass; conditioning worsens as complementarity tightens
        sol += lu_solve(self.lu, rhs - self.K @ sol, check_finite=False)
        if not np.all(np.isfinite(sol)):
            raise EliminationBreakdown("singular condensed KKT matrix")
        return sol[:n_z], sol[n_z:]


class _ChordalBackend:
    def __init__(self, rqp, workers):
        self.struct = build_direction_structure(rqp)
        self.workers = workers
        self.factors = None

    def solve(self, red, fresh):
        d_z, d_lambda, self.factors = solve_reduced_kkt_chordal(
            red,
            self.struct,
            workers=self.workers,
            reuse=None if fresh else self.factors,
        )
        return d_z, d_lambda


def ipm_solve(rqp, options=None):
    """Solve the epigraph program from a cold start.

    Iterates until the scaled infinity norms of the six feasibility blocks
    and the two complementarity blocks fall below their tolerances.  An
    infeasible problem has no certificate here; it surfaces as ``max_iter``.
    """
    opts = options if options is not None else IpmOptions()
    start = time.perf_counter()
    backend = (
        _ChordalBackend(rqp, opts.workers)
        if opts.backend == "chordal"
        else _DenseBackend()
    )

    b_inf = float(np.max(np.abs(rqp.b))) if rqp.b.size else 0.0
    d_inf = float(np.max(np.abs(rqp.d))) if rqp.m_ineq else 0.0
    scale = 1.0 + b_inf + d_inf
    n_comp = rqp.n_rows + rqp.m_ineq

    it = initial_iterate(rqp)
    history = []
    iterates = []
    status = "max_iter"
    iterations = 0

    for outer in range(opts.max_iter + 1):
        res = kkt_residuals(rqp, it)
        norms = res.block_norms()
        feas = max(norms[k] for k in _FEAS_BLOCKS) / scale
        comp = max(norms["s"], norms["w"]) / scale
        history.append({"feas": feas, "comp": comp})
        if opts.keep_iterates:
            iterates.append(it)
        if feas <= opts.tol_feas and comp <= opts.tol_comp:
            status = "optimal"
            break
        if outer == opts.max_iter:
            break

        comp_measure = it.mu @ it.s
        if rqp.m_ineq:
            comp_measure += it.nu @ it.w
        comp_measure /= n_comp
        try:
            # failures surface as non-finite values, checked by the backends
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                if opts.use_corrector:
                    red = build_reduced_kkt(rqp, it, res)
                    aff = recover_step(red, *backend.solve(red, fresh=True))
                    probe = it.step(aff, step_length(it, aff, 1.0))
                    comp_aff = probe.mu @ probe.s
                    if rqp.m_ineq:
                        comp_aff += probe.nu @ probe.w
                    sigma = min(1.0, comp_aff / (n_comp * comp_measure)) ** 3
                    res_c = replace(
                        res,
                        r_s=res.r_s - sigma * comp_measure + aff.d_mu * aff.d_s,
                        r_w=res.r_w - sigma * comp_measure + aff.d_nu * aff.d_w,
                    )
                    red_c = red.with_rhs(res_c)
                    dirn = recover_step(red_c, *backend.solve(red_c, fresh=False))
                else:
                    res_c = replace(
                        res,
                        r_s=res.r_s - opts.sigma_fixed * comp_measure,
                        r_w=res.r_w - opts.sigma_fixed * comp_measure,
                    )
                    red_c = build_reduced_kkt(rqp, it, res_c)
                    dirn = recover_step(red_c, *backend.solve(red_c, fresh=True))
            pieces = (dirn.d_t, dirn.d_z, dirn.d_mu, dirn.d_nu, dirn.d_s, dirn.d_w)
            if not np.isfinite(dirn.d_tau) or not all(
                np.all(np.isfinite(p)) for p in pieces
            ):
                raise EliminationBreakdown("non-finite direction")
        except (EliminationBreakdown, np.linalg.LinAlgError):
            status = "numerical_breakdown"
            break

        it = it.step(dirn, step_length(it, dirn, opts.gamma_ftb))
        iterations += 1

    wall = time.perf_counter() - start
    return Solution(
        status=status,
        iterate=it,
        objective=float(it.tau),
        per_scenario_costs=rqp.scenario_costs(it.z),
        stats=SolveStats(
            iterations=iterations,
            residuals=history,
            wall_time=wall,
            iterates=iterates,
        ),
    )
