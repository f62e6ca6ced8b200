"""Pure-numpy reference implementations of the per-iteration block kernels.

Selected by setting RMPC_NO_NUMBA=1, or automatically when numba is not
importable.  Semantics must match kernels.numba_impl exactly; the test suite
compares the two paths elementwise.
"""

import numpy as np

BACKEND = "numpy"


def quad_forms(z, qflat, qoff, blk_starts):
    """Per-block quadratic forms 0.5 * z_r' Q_r z_r, one value per block."""
    n = blk_starts.shape[0] - 1
    out = np.empty(n)
    for r in range(n):
        lo, hi = blk_starts[r], blk_starts[r + 1]
        m = hi - lo
        Q = qflat[qoff[r]:qoff[r + 1]].reshape(m, m)
        zr = z[lo:hi]
        out[r] = 0.5 * (zr @ Q @ zr)
    return out


def block_matvec(z, qflat, qoff, blk_starts):
    """Stacked per-block products Q_r z_r."""
    out = np.empty_like(z)
    n = blk_starts.shape[0] - 1
    for r in range(n):
        lo, hi = blk_starts[r], blk_starts[r + 1]
        m = hi - lo
        Q = qflat[qoff[r]:qoff[r + 1]].reshape(m, m)
        out[lo:hi] = Q @ z[lo:hi]
    return out


def block_dots(a, b, blk_starts):
    """Per-block inner products a_r' b_r."""
    n = blk_starts.shape[0] - 1
    out = np.empty(n)
    for r in range(n):
        lo, hi = blk_starts[r], blk_starts[r + 1]
        out[r] = a[lo:hi] @ b[lo:hi]
    return out


def scale_blocks(x, scale, blk_starts):
    """Scale block r of x by scale[r]."""
    out = np.empty_like(x)
    n = blk_starts.shape[0] - 1
    for r in range(n):
        lo, hi = blk_starts[r], blk_starts[r + 1]
        out[lo:hi] = scale[r] * x[lo:hi]
    return out


def chain_apply(tau, t, M, N):
    """Chained epigraph combination per row: (B t - beta tau)_(j,k).

    Row (j,0) gives t_1^j - tau, interior rows give t_(k+1)^j - t_k^j and the
    terminal row gives -t_N^j.
    """
    out = np.empty(M * (N + 1))
    for j in range(M):
        base = j * (N + 1)
        tb = j * N
        out[base] = t[tb] - tau
        for k in range(1, N):
            out[base + k] = t[tb + k] - t[tb + k - 1]
        out[base + N] = -t[tb + N - 1]
    return out


def eta_products(y, M, N):
    """Adjoint of chain_apply: the stacked vector (-beta' y, Bchain' y)."""
    out = np.empty(1 + M * N)
    acc = 0.0
    for j in range(M):
        base = j * (N + 1)
        acc += y[base]
        for k in range(N):
            out[1 + j * N + k] = y[base + k] - y[base + k + 1]
    out[0] = -acc
    return out


def arrow_gram(dms, M, N):
    """Gram matrix G' diag(dms) G of the epigraph coefficient columns.

    Arrowhead-plus-tridiagonal: the bound variable couples to each scenario's
    first chain entry, chain entries couple to their neighbours.
    """
    n = 1 + M * N
    P = np.zeros((n, n))
    for j in range(M):
        base = j * (N + 1)
        P[0, 0] += dms[base]
        for k in range(1, N + 1):
            c = j * N + k
            P[c, c] = dms[base + k - 1] + dms[base + k]
            if k == 1:
                P[0, c] = -dms[base]
                P[c, 0] = -dms[base]
            if k < N:
                P[c, c + 1] = -dms[base + k]
                P[c + 1, c] = -dms[base + k]
    return P


def step_scale(vals, deltas):
    """Largest step a with vals + a*deltas >= 0; inf when unconstrained."""
    best = np.inf
    for i in range(vals.shape[0]):
        if deltas[i] < 0.0:
            r = -vals[i] / deltas[i]
            if r < best:
                best = r
    return best
