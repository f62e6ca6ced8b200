"""Epigraph operators, KKT residual blocks, and the condensation cascade."""

import numpy as np
import pytest
from scipy.linalg import cho_factor

from rmpc import (
    assemble_epigraph_operators,
    build_reduced_kkt,
    kkt_residuals,
    recover_step,
    verify_direction,
)
from rmpc.oracle import dense_kkt_solve

from conftest import interior_point, make_rqp


@pytest.fixture
def medium_rqp():
    return make_rqp(21, (2, 1, 3, 1, (2, 2), 1))


def test_epigraph_operators_small_cases():
    ops = assemble_epigraph_operators(1, 2)
    np.testing.assert_array_equal(ops.Bchain, [[1, 0], [-1, 1], [0, -1]])
    np.testing.assert_array_equal(ops.beta, [1, 0, 0])

    ops = assemble_epigraph_operators(2, 2)
    np.testing.assert_array_equal(ops.beta, [1, 0, 0, 1, 0, 0])
    assert ops.Bchain.shape == (6, 4)
    np.testing.assert_array_equal(ops.Bchain[:3, 2:], 0.0)
    np.testing.assert_array_equal(ops.Bchain[3:, :2], 0.0)


@pytest.mark.parametrize("M,N", [(1, 1), (2, 3), (4, 5)])
def test_epigraph_columns_sum_to_zero(M, N):
    ops = assemble_epigraph_operators(M, N)
    np.testing.assert_array_equal(ops.Bchain.sum(axis=0), np.zeros(M * N))
    for col in ops.Bchain.T:
        assert np.sum(col == 1.0) == 1
        assert np.sum(col == -1.0) == 1


def test_residual_blocks_match_longhand(medium_rqp):
    """Every block recomputed with dense operators and plain numpy."""
    rqp = medium_rqp
    rng = np.random.default_rng(0)
    it = interior_point(rqp, rng)
    centering = 0.37
    res = kkt_residuals(rqp, it, centering=centering)

    ops = assemble_epigraph_operators(rqp.M, rqp.N)
    quad = np.empty(rqp.n_rows)
    qz = np.empty(rqp.n_z)
    r = 0
    for j in range(rqp.M):
        for k in range(rqp.N + 1):
            sl = rqp.z_slice(j, k)
            quad[r] = 0.5 * it.z[sl] @ rqp.Q_blocks[j][k] @ it.z[sl]
            qz[sl] = rqp.Q_blocks[j][k] @ it.z[sl]
            r += 1

    assert abs(res.r_tau - (1.0 - ops.beta @ it.mu)) < 1e-13
    np.testing.assert_allclose(res.r_t, ops.Bchain.T @ it.mu, atol=1e-13)
    stat = np.repeat(it.mu, np.diff(np.array(rqp.packed[0]))) * qz
    stat += rqp.A_eq.T @ it.lam + rqp.G_ineq.T @ it.nu
    np.testing.assert_allclose(res.r_mu_stat, stat, atol=1e-12)
    epi = quad + ops.Bchain @ it.t - ops.beta * it.tau + it.s
    np.testing.assert_allclose(res.r_epi, epi, atol=1e-12)
    np.testing.assert_allclose(res.r_lambda, rqp.A_eq @ it.z - rqp.b, atol=1e-12)
    np.testing.assert_allclose(res.r_nu, rqp.G_ineq @ it.z + it.w - rqp.d, atol=1e-12)
    np.testing.assert_allclose(res.r_s, it.mu * it.s - centering, atol=1e-14)
    np.testing.assert_allclose(res.r_w, it.nu * it.w - centering, atol=1e-14)


def test_epigraph_residual_zero_by_construction(medium_rqp):
    rqp = medium_rqp
    rng = np.random.default_rng(1)
    it = interior_point(rqp, rng)
    it.z[:] = 0.0
    # Decreasing positive ramp keeps every chain row strictly negative.
    ramp = np.array([rqp.N - k for k in range(rqp.N)], dtype=float) + 1.0
    it.t = np.tile(ramp, rqp.M)
    it.tau = ramp[0] + 1.0
    ops = assemble_epigraph_operators(rqp.M, rqp.N)
    chain = ops.Bchain @ it.t - ops.beta * it.tau
    it.s = -chain
    assert np.all(it.s > 0)
    res = kkt_residuals(rqp, it)
    assert np.max(np.abs(res.r_epi)) < 1e-12


def test_eta_gram_hand_example():
    rqp = make_rqp(22, (1, 1, 1, 0, (1,), 1))
    assert (rqp.M, rqp.N) == (1, 1)
    rng = np.random.default_rng(2)
    it = interior_point(rqp, rng)
    it.mu[:] = 1.0
    it.s[:] = 1.0
    res = kkt_residuals(rqp, it)
    red = build_reduced_kkt(rqp, it, res)
    np.testing.assert_allclose(red.P, [[1.0, -1.0], [-1.0, 2.0]], atol=1e-14)


def test_zero_iterate_kills_cross_term(medium_rqp):
    rqp = medium_rqp
    rng = np.random.default_rng(3)
    it = interior_point(rqp, rng)
    it.z[:] = 0.0
    res = kkt_residuals(rqp, it)
    red = build_reduced_kkt(rqp, it, res)
    assert np.max(np.abs(red.R)) == 0.0
    expected = red.Q_mu + rqp.G_ineq.T @ ((it.nu / it.w)[:, None] * rqp.G_ineq)
    np.testing.assert_allclose(red.Q_s, expected, atol=1e-12)


def test_schur_term_is_psd(medium_rqp):
    rqp = medium_rqp
    rng = np.random.default_rng(4)
    it = interior_point(rqp, rng)
    res = kkt_residuals(rqp, it)
    red = build_reduced_kkt(rqp, it, res)
    schur = (red.z_quad - red.Q_mu) - rqp.G_ineq.T @ (
        (it.nu / it.w)[:, None] * rqp.G_ineq
    )
    schur = schur - red.cross @ np.linalg.solve(red.eta_gram, red.cross.T)
    scale = 1.0 + np.max(np.abs(schur))
    assert np.min(np.linalg.eigvalsh(0.5 * (schur + schur.T))) >= -1e-9 * scale


def test_eta_gram_cholesky_succeeds_at_interior_points(full_corpus):
    rng = np.random.default_rng(5)
    for rqp in full_corpus[:8]:
        it = interior_point(rqp, rng)
        res = kkt_residuals(rqp, it)
        red = build_reduced_kkt(rqp, it, res)
        cho_factor(red.eta_gram)  # raises if not positive definite


def test_recover_zero_residuals_gives_zero_direction(medium_rqp):
    rqp = medium_rqp
    rng = np.random.default_rng(6)
    it = interior_point(rqp, rng)
    res = kkt_residuals(rqp, it)
    zero = type(res)(
        r_tau=0.0,
        r_t=np.zeros_like(res.r_t),
        r_mu_stat=np.zeros_like(res.r_mu_stat),
        r_epi=np.zeros_like(res.r_epi),
        r_lambda=np.zeros_like(res.r_lambda),
        r_nu=np.zeros_like(res.r_nu),
        r_s=np.zeros_like(res.r_s),
        r_w=np.zeros_like(res.r_w),
    )
    red = build_reduced_kkt(rqp, it, zero)
    dirn = recover_step(red, np.zeros(rqp.n_z), np.zeros(rqp.m_eq))
    for piece in (dirn.d_t, dirn.d_z, dirn.d_mu, dirn.d_nu, dirn.d_s, dirn.d_w):
        assert np.max(np.abs(piece), initial=0.0) < 1e-14
    assert dirn.d_tau == 0.0


def test_slack_direction_two_ways(medium_rqp):
    rqp = medium_rqp
    rng = np.random.default_rng(7)
    it = interior_point(rqp, rng)
    res = kkt_residuals(rqp, it)
    red = build_reduced_kkt(rqp, it, res)
    d_z, d_lambda = dense_kkt_solve(red)
    dirn = recover_step(red, d_z, d_lambda)
    alt = -res.r_nu - rqp.G_ineq @ dirn.d_z
    np.testing.assert_allclose(dirn.d_w, alt, atol=1e-12)


def test_verify_direction_scales(medium_rqp):
    rqp = medium_rqp
    rng = np.random.default_rng(8)
    it = interior_point(rqp, rng)
    res = kkt_residuals(rqp, it)
    red = build_reduced_kkt(rqp, it, res)
    d_z, d_lambda = dense_kkt_solve(red)
    dirn = recover_step(red, d_z, d_lambda)
    assert verify_direction(rqp, it, res, dirn) <= 1e-12

    # Linear growth in a primal perturbation.
    import dataclasses

    scores = []
    for eps in (1e-4, 2e-4):
        bent = dataclasses.replace(dirn, d_z=dirn.d_z + eps)
        scores.append(verify_direction(rqp, it, res, bent))
    assert scores[1] / scores[0] == pytest.approx(2.0, abs=0.01)

    zero = dataclasses.replace(
        dirn,
        d_tau=0.0,
        d_t=np.zeros_like(dirn.d_t),
        d_z=np.zeros_like(dirn.d_z),
        d_mu=np.zeros_like(dirn.d_mu),
        d_nu=np.zeros_like(dirn.d_nu),
        d_lambda=np.zeros_like(dirn.d_lambda),
        d_s=np.zeros_like(dirn.d_s),
        d_w=np.zeros_like(dirn.d_w),
    )
    score = verify_direction(rqp, it, res, zero)
    worst = max(kkt_residuals(rqp, it).block_norms().values())
    assert score == pytest.approx(worst / (1.0 + worst), rel=1e-10)


def test_elimination_consistency_across_corpus(full_corpus):
    """Dense solve of the condensed system must satisfy all eight equations."""
    rng = np.random.default_rng(9)
    for rqp in full_corpus:
        it = interior_point(rqp, rng)
        res = kkt_residuals(rqp, it)
        red = build_reduced_kkt(rqp, it, res)
        d_z, d_lambda = dense_kkt_solve(red)
        dirn = recover_step(red, d_z, d_lambda)
        assert verify_direction(rqp, it, res, dirn) <= 1e-10


def test_coupling_is_stage0_only_without_shared_rows():
    """With coupling rows absent and z=0, the condensed quadratic is
    block diagonal per scenario; cross-scenario interaction enters only
    through the equality rows and the epigraph bound."""
    rqp = make_rqp(23, (2, 1, 3, 1, (2, 2), 1))
    rng = np.random.default_rng(10)
    it = interior_point(rqp, rng)
    it.z[:] = 0.0
    res = kkt_residuals(rqp, it)
    red = build_reduced_kkt(rqp, it, res)
    H = red.H
    per = rqp.per_scenario_dim
    for ja in range(rqp.M):
        for jb in range(rqp.M):
            if ja != jb:
                blk = H[ja * per : (ja + 1) * per, jb * per : (jb + 1) * per]
                assert np.max(np.abs(blk)) < 1e-12
