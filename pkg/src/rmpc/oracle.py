"""Independent reference computations for testing the solver.

Everything here recomputes from first principles with plain numpy so that a
bug in the production path cannot hide behind shared code: a pivoted dense
solve for the condensed system, an exhaustive active-set search for tiny
instances, and a from-scratch optimality check for solver output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import chain, combinations

import numpy as np
from scipy.linalg import LinAlgWarning, solve

from .msgpass import EliminationBreakdown
from .rqp import Iterate

__all__ = [
    "BruteForceSolution",
    "VerificationReport",
    "dense_kkt_solve",
    "active_set_bruteforce",
    "verify_solution",
]

_BRUTE_CAP = 14


def dense_kkt_solve(red):
    """Reference solve of the condensed saddle system.

    Assembles the full matrix, factors it with symmetric indefinite pivoting,
    applies one step of iterative refinement, and insists on a relative
    residual of 1e-11.
    """
    H = np.asarray(red.H, dtype=float)
    A = np.asarray(red.rqp.A_eq, dtype=float)
    n_z = H.shape[0]
    m_eq = A.shape[0]
    K = np.zeros((n_z + m_eq, n_z + m_eq))
    K[:n_z, :n_z] = H
    K[:n_z, n_z:] = A.T
    K[n_z:, :n_z] = A
    rhs = np.concatenate([red.rhs_z, red.rhs_lambda])
    try:
        # the residual check below is the accuracy guarantee, not rcond
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            sol = solve(K, rhs, assume_a="sym", check_finite=False)
            sol += solve(K, rhs - K @ sol, assume_a="sym", check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise EliminationBreakdown("singular condensed KKT matrix") from exc
    resid = np.max(np.abs(K @ sol - rhs)) / (1.0 + np.max(np.abs(rhs)))
    if not np.isfinite(resid) or resid > 1e-11:
        raise EliminationBreakdown(f"dense KKT residual {resid:.3e} above 1e-11")
    return sol[:n_z], sol[n_z:]


def _cost_products(rqp, z):
    """Per-block cost products and quadratic values, computed longhand."""
    qz = np.zeros(rqp.n_z)
    quad = np.zeros(rqp.n_rows)
    r = 0
    for j in range(rqp.M):
        for k in range(rqp.N + 1):
            sl = rqp.z_slice(j, k)
            prod = rqp.Q_blocks[j][k] @ z[sl]
            qz[sl] = prod
            quad[r] = 0.5 * float(z[sl] @ prod)
            r += 1
    return qz, quad


def _scenario_costs(rqp, z):
    _, quad = _cost_products(rqp, z)
    return quad.reshape(rqp.M, rqp.N + 1).sum(axis=1)


def _weighted_cost(rqp, weights):
    """Block diagonal of the cost blocks scaled by per-scenario weights."""
    Qw = np.zeros((rqp.n_z, rqp.n_z))
    for j, w_j in weights:
        for k in range(rqp.N + 1):
            sl = rqp.z_slice(j, k)
            Qw[sl, sl] = w_j * rqp.Q_blocks[j][k]
    return Qw


def _scenario_grad(rqp, qz, j):
    out = np.zeros(rqp.n_z)
    per = rqp.per_scenario_dim
    out[j * per : (j + 1) * per] = qz[j * per : (j + 1) * per]
    return out


def _subsets(items):
    return chain.from_iterable(combinations(items, r) for r in range(len(items) + 1))


def _solve_support_one(rqp, j, act, G_act, rhs_c):
    """Single active scenario: the stationarity system is linear."""
    n_z, m_eq = rqp.n_z, rqp.m_eq
    A = rqp.A_eq
    rows = np.vstack([A, G_act]) if G_act.size else A
    m = rows.shape[0]
    K = np.zeros((n_z + m, n_z + m))
    K[:n_z, :n_z] = _weighted_cost(rqp, [(j, 1.0)])
    K[:n_z, n_z:] = rows.T
    K[n_z:, :n_z] = rows
    rhs = np.concatenate([np.zeros(n_z), rhs_c])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    if np.max(np.abs(K @ sol - rhs)) > 1e-9 * (1.0 + np.max(np.abs(rhs))):
        return None
    z = sol[:n_z]
    lam = sol[n_z : n_z + m_eq]
    nu_act = sol[n_z + m_eq :]
    tau = float(_scenario_costs(rqp, z)[j])
    return z, lam, nu_act, np.array([1.0]), tau


def _solve_support_many(rqp, supp, act, G_act, rhs_c):
    """Several active scenarios: damped Newton on the bilinear system.

    Unknowns are (z, lambda, nu_active, mu_support, tau); the equations are
    stationarity, the active equalities, cost-equals-bound per supported
    scenario, and unit multiplier mass.
    """
    n_z, m_eq = rqp.n_z, rqp.m_eq
    A, b = rqp.A_eq, rqp.b
    ns, na = len(supp), len(act)
    n_tot = n_z + m_eq + na + ns + 1
    sl_lam = slice(n_z, n_z + m_eq)
    sl_nu = slice(n_z + m_eq, n_z + m_eq + na)
    sl_mu = slice(n_z + m_eq + na, n_z + m_eq + na + ns)

    seed = _solve_support_one(rqp, supp[0], act, G_act, rhs_c)
    x = np.zeros(n_tot)
    if seed is not None:
        x[:n_z], x[sl_lam], x[sl_nu] = seed[0], seed[1], seed[2]
    x[sl_mu] = 1.0 / ns
    x[-1] = float(np.mean(_scenario_costs(rqp, x[:n_z])[list(supp)]))

    def residual(x):
        z, mu, tau = x[:n_z], x[sl_mu], x[-1]
        qz, quad = _cost_products(rqp, z)
        costs = quad.reshape(rqp.M, rqp.N + 1).sum(axis=1)
        stat = _weighted_cost(rqp, list(zip(supp, mu))) @ z + A.T @ x[sl_lam]
        if na:
            stat += G_act.T @ x[sl_nu]
        parts = [stat, A @ z - b]
        if na:
            parts.append(G_act @ z - rhs_c[m_eq:])
        parts.append(costs[list(supp)] - tau)
        parts.append([mu.sum() - 1.0])
        return np.concatenate(parts), qz

    def jacobian(x, qz):
        z, mu = x[:n_z], x[sl_mu]
        J = np.zeros((n_tot, n_tot))
        J[:n_z, :n_z] = _weighted_cost(rqp, list(zip(supp, mu)))
        J[:n_z, sl_lam] = A.T
        J[sl_lam, :n_z] = A
        if na:
            J[:n_z, sl_nu] = G_act.T
            J[sl_nu, :n_z] = G_act
        for i, j in enumerate(supp):
            grad = _scenario_grad(rqp, qz, j)
            J[:n_z, n_z + m_eq + na + i] = grad
            J[n_z + m_eq + na + i, :n_z] = grad
            J[n_z + m_eq + na + i, -1] = -1.0
        J[-1, sl_mu] = 1.0
        return J

    fx, qz = residual(x)
    norm = np.max(np.abs(fx))
    scale = 1.0 + np.max(np.abs(b)) if b.size else 1.0
    for _ in range(60):
        if norm <= 1e-11 * scale:
            break
        step, *_ = np.linalg.lstsq(jacobian(x, qz), -fx, rcond=None)
        alpha = 1.0
        for _ in range(30):
            trial = x + alpha * step
            f_trial, q_trial = residual(trial)
            n_trial = np.max(np.abs(f_trial))
            if n_trial < norm:
                x, fx, qz, norm = trial, f_trial, q_trial, n_trial
                break
            alpha *= 0.5
        else:
            return None
    if norm > 1e-11 * scale:
        return None
    return x[:n_z], x[sl_lam], x[sl_nu], x[sl_mu], float(x[-1])


@dataclass
class BruteForceSolution:
    """Exhaustive-search optimum of a tiny instance."""

    status: str
    tau: float | None
    z: np.ndarray | None
    t: np.ndarray | None
    active_scenarios: tuple
    active_rows: tuple
    iterate: Iterate | None

    @property
    def objective(self):
        return self.tau


def active_set_bruteforce(rqp):
    """Global optimum of a tiny instance by enumerating active sets.

    Tries every nonempty set of bound-attaining scenarios against every
    subset of tight inequality rows, solves the stationarity system of each
    guess, and keeps the best candidate that is primal feasible with
    nonnegative multipliers.  Ties within 1e-12 go to the lexicographically
    smallest active set.  Exponential by design, so instances with more than
    14 inequality rows are refused.
    """
    if rqp.n_rows + rqp.m_ineq > _BRUTE_CAP:
        raise ValueError(
            f"brute force needs at most {_BRUTE_CAP} inequality rows, "
            f"got {rqp.n_rows + rqp.m_ineq}"
        )
    M, N = rqp.M, rqp.N
    b_inf = float(np.max(np.abs(rqp.b))) if rqp.b.size else 0.0
    d_inf = float(np.max(np.abs(rqp.d))) if rqp.m_ineq else 0.0
    feas_tol = 1e-9 * (1.0 + b_inf + d_inf)

    best = None
    for supp in _subsets(range(M)):
        if not supp:
            continue
        for act in _subsets(range(rqp.m_ineq)):
            act_ix = np.array(act, dtype=np.int64)
            G_act = rqp.G_ineq[act_ix] if act else np.zeros((0, rqp.n_z))
            rhs_c = np.concatenate([rqp.b, rqp.d[act_ix]])
            if len(supp) == 1:
                cand = _solve_support_one(rqp, supp[0], act, G_act, rhs_c)
            else:
                cand = _solve_support_many(rqp, supp, act, G_act, rhs_c)
            if cand is None:
                continue
            z, lam, nu_act, mu_supp, tau = cand
            if rqp.m_eq and np.max(np.abs(rqp.A_eq @ z - rqp.b)) > feas_tol:
                continue
            if rqp.m_ineq and np.max(rqp.G_ineq @ z - rqp.d) > feas_tol:
                continue
            costs = _scenario_costs(rqp, z)
            if np.max(costs) > tau + feas_tol:
                continue
            if np.min(mu_supp) < -1e-9:
                continue
            if nu_act.size and np.min(nu_act) < -1e-9:
                continue
            key = (supp, act)
            if (
                best is None
                or tau < best[0] - 1e-12
                or (abs(tau - best[0]) <= 1e-12 and key < best[1])
            ):
                best = (tau, key, (z, lam, nu_act, mu_supp))

    if best is None:
        return BruteForceSolution(
            status="infeasible",
            tau=None,
            z=None,
            t=None,
            active_scenarios=(),
            active_rows=(),
            iterate=None,
        )

    tau, (supp, act), (z, lam, nu_act, mu_supp) = best
    _, quad = _cost_products(rqp, z)
    stage = quad.reshape(M, N + 1)
    # tight chains: each bound variable carries the cost still to come
    t = np.zeros(M * N)
    for j in range(M):
        t[j * N : (j + 1) * N] = stage[j, 1:][::-1].cumsum()[::-1]
    s = np.zeros(rqp.n_rows)
    for j in range(M):
        base = j * (N + 1)
        s[base] = tau - stage[j, 0] - t[j * N]
        for k in range(1, N):
            s[base + k] = t[j * N + k - 1] - stage[j, k] - t[j * N + k]
        s[base + N] = t[j * N + N - 1] - stage[j, N]
    mu = np.zeros(rqp.n_rows)
    for i, j in enumerate(supp):
        mu[j * (N + 1) : (j + 1) * (N + 1)] = mu_supp[i]
    nu = np.zeros(rqp.m_ineq)
    if act:
        nu[np.array(act, dtype=np.int64)] = nu_act
    w = rqp.d - rqp.G_ineq @ z if rqp.m_ineq else np.zeros(0)
    it = Iterate(
        tau=tau,
        t=t,
        z=z,
        mu=mu,
        nu=nu,
        lam=lam,
        s=np.maximum(s, 0.0),
        w=np.maximum(w, 0.0),
    )
    return BruteForceSolution(
        status="optimal",
        tau=tau,
        z=z,
        t=t,
        active_scenarios=tuple(supp),
        active_rows=tuple(act),
        iterate=it,
    )


@dataclass
class VerificationReport:
    """From-scratch optimality check of a solver result.

    ``kkt_block_norms`` holds the eight residual infinity norms scaled by
    (1 + the data magnitudes); ``tau_gap`` is the bound minus the worst
    scenario cost (negative means the bound is violated).
    """

    kkt_block_norms: dict
    tau_gap: float
    nonanticipativity_norm: float
    passed: bool


def verify_solution(rqp, sol, tol=1e-7):
    """Recompute optimality of a solution through an independent path.

    Accepts anything carrying an ``iterate`` (or a bare iterate) and rebuilds
    all eight KKT residual blocks, the bound gap, and the shared-control
    mismatch with plain matrix products only.
    """
    it = sol.iterate if hasattr(sol, "iterate") else sol
    M, N = rqp.M, rqp.N
    qz, quad = _cost_products(rqp, it.z)
    costs = quad.reshape(M, N + 1).sum(axis=1)

    stat = rqp.A_eq.T @ it.lam
    if rqp.m_ineq:
        stat = stat + rqp.G_ineq.T @ it.nu
    r = 0
    for j in range(M):
        for k in range(N + 1):
            sl = rqp.z_slice(j, k)
            stat[sl] += it.mu[r] * qz[sl]
            r += 1

    heads = it.mu.reshape(M, N + 1)[:, 0]
    r_tau = 1.0 - heads.sum()
    r_t = np.zeros(M * N)
    r_epi = np.zeros(rqp.n_rows)
    for j in range(M):
        base = j * (N + 1)
        for k in range(N):
            r_t[j * N + k] = it.mu[base + k] - it.mu[base + k + 1]
        r_epi[base] = quad[base] + it.t[j * N] - it.tau + it.s[base]
        for k in range(1, N):
            r_epi[base + k] = (
                quad[base + k] + it.t[j * N + k] - it.t[j * N + k - 1] + it.s[base + k]
            )
        r_epi[base + N] = quad[base + N] - it.t[j * N + N - 1] + it.s[base + N]

    b_inf = float(np.max(np.abs(rqp.b))) if rqp.b.size else 0.0
    d_inf = float(np.max(np.abs(rqp.d))) if rqp.m_ineq else 0.0
    scale = 1.0 + b_inf + d_inf
    inf = lambda v: float(np.max(np.abs(v))) / scale if np.size(v) else 0.0
    norms = {
        "tau": abs(r_tau) / scale,
        "t": inf(r_t),
        "mu_stat": inf(stat),
        "epi": inf(r_epi),
        "lambda": inf(rqp.A_eq @ it.z - rqp.b),
        "nu": inf(rqp.G_ineq @ it.z + it.w - rqp.d) if rqp.m_ineq else 0.0,
        "s": inf(it.mu * it.s),
        "w": inf(it.nu * it.w) if rqp.m_ineq else 0.0,
    }
    tau_gap = float(it.tau - np.max(costs))
    if rqp.structure is not None and rqp.structure.nonant.padded.shape[0]:
        nonant = float(np.max(np.abs(rqp.structure.nonant.padded @ it.z)))
    else:
        nonant = 0.0
    passed = (
        all(v <= tol for v in norms.values())
        and nonant <= tol
        and tau_gap >= -tol
    )
    return VerificationReport(
        kkt_block_norms=norms,
        tau_gap=tau_gap,
        nonanticipativity_norm=nonant,
        passed=passed,
    )
