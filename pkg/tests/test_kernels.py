"""The numba and numpy kernel implementations must agree elementwise."""

import subprocess
import sys

import numpy as np
import pytest

from rmpc.kernels import numba_impl, numpy_impl


def random_blocks(rng, n_blocks=7, max_dim=4):
    dims = rng.integers(1, max_dim + 1, n_blocks)
    starts = np.zeros(n_blocks + 1, dtype=np.int64)
    starts[1:] = np.cumsum(dims)
    qoff = np.zeros(n_blocks + 1, dtype=np.int64)
    qoff[1:] = np.cumsum(dims * dims)
    qflat = np.empty(qoff[-1])
    for r in range(n_blocks):
        d = dims[r]
        G = rng.standard_normal((d, d))
        qflat[qoff[r]:qoff[r + 1]] = (G + G.T).ravel()
    return starts, qflat, qoff


@pytest.mark.parametrize("seed", range(5))
def test_block_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    starts, qflat, qoff = random_blocks(rng)
    n = starts[-1]
    z = rng.standard_normal(n)
    y = rng.standard_normal(n)
    scale = rng.uniform(0.1, 3.0, starts.size - 1)
    for name in ("quad_forms", "block_matvec"):
        a = getattr(numpy_impl, name)(z, qflat, qoff, starts)
        b = getattr(numba_impl, name)(z, qflat, qoff, starts)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(
        numpy_impl.block_dots(z, y, starts),
        numba_impl.block_dots(z, y, starts),
        rtol=1e-13,
        atol=1e-13,
    )
    np.testing.assert_allclose(
        numpy_impl.scale_blocks(z, scale, starts),
        numba_impl.scale_blocks(z, scale, starts),
        rtol=0,
        atol=0,
    )


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("M,N", [(1, 1), (2, 3), (4, 4)])
def test_chain_kernels_agree(seed, M, N):
    rng = np.random.default_rng(100 + seed)
    tau = float(rng.standard_normal())
    t = rng.standard_normal(M * N)
    y = rng.standard_normal(M * (N + 1))
    dms = rng.uniform(0.1, 5.0, M * (N + 1))
    np.testing.assert_array_equal(
        numpy_impl.chain_apply(tau, t, M, N), numba_impl.chain_apply(tau, t, M, N)
    )
    np.testing.assert_allclose(
        numpy_impl.eta_products(y, M, N),
        numba_impl.eta_products(y, M, N),
        rtol=1e-14,
        atol=1e-14,
    )
    np.testing.assert_allclose(
        numpy_impl.arrow_gram(dms, M, N),
        numba_impl.arrow_gram(dms, M, N),
        rtol=1e-14,
        atol=1e-14,
    )


@pytest.mark.parametrize("impl", [numpy_impl, numba_impl])
def test_step_scale_semantics(impl):
    assert impl.step_scale(np.array([1.0]), np.array([-2.0])) == 0.5
    assert impl.step_scale(np.array([1.0, 3.0]), np.array([0.5, 0.0])) == np.inf
    vals = np.array([2.0, 1.0, 4.0])
    deltas = np.array([-1.0, -4.0, 1.0])
    assert impl.step_scale(vals, deltas) == 0.25


def test_step_scale_agree():
    rng = np.random.default_rng(3)
    for _ in range(20):
        vals = rng.uniform(0.01, 2.0, 15)
        deltas = rng.standard_normal(15)
        a = numpy_impl.step_scale(vals, deltas)
        b = numba_impl.step_scale(vals, deltas)
        assert a == b or np.isclose(a, b, rtol=1e-14)


def test_chain_and_eta_are_adjoint():
    """<chain(tau,t), y> must equal <(tau,t), adjoint(y)> with the sign split."""
    rng = np.random.default_rng(11)
    M, N = 3, 4
    tau = float(rng.standard_normal())
    t = rng.standard_normal(M * N)
    y = rng.standard_normal(M * (N + 1))
    lhs = numpy_impl.chain_apply(tau, t, M, N) @ y
    eta = numpy_impl.eta_products(y, M, N)
    rhs = tau * eta[0] + t @ eta[1:]
    assert abs(lhs - rhs) < 1e-12


def test_arrow_gram_matches_explicit_gram():
    rng = np.random.default_rng(12)
    M, N = 2, 3
    dms = rng.uniform(0.1, 4.0, M * (N + 1))
    n = 1 + M * N
    G = np.empty((M * (N + 1), n))
    for c in range(n):
        unit = np.zeros(n)
        unit[c] = 1.0
        G[:, c] = numpy_impl.chain_apply(unit[0], unit[1:], M, N)
    expected = G.T @ (dms[:, None] * G)
    np.testing.assert_allclose(numpy_impl.arrow_gram(dms, M, N), expected, atol=1e-13)


@pytest.mark.parametrize(
    "env,expected",
    [({"RMPC_NO_NUMBA": "1"}, "numpy"), ({"RMPC_NO_NUMBA": ""}, "numba")],
)
def test_backend_selection_env_flag(env, expected):
    import os

    code = "from rmpc import kernels; print(kernels.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={**os.environ, **env},
        check=True,
    )
    assert out.stdout.strip() == expected
