"""Numba-compiled block kernels, mirroring kernels.numpy_impl.

Loops are written out explicitly so nopython mode compiles them to tight
machine code.  No fastmath: the chordal backend promises bit-identical
results across worker counts, so IEEE evaluation order must be fixed.
"""

import numpy as np
from numba import njit

BACKEND = "numba"


@njit(cache=True)
def quad_forms(z, qflat, qoff, blk_starts):
    n = blk_starts.shape[0] - 1
    out = np.empty(n)
    for r in range(n):
        lo = blk_starts[r]
        m = blk_starts[r + 1] - lo
        base = qoff[r]
        acc = 0.0
        for a in range(m):
            row = 0.0
            for c in range(m):
                row += qflat[base + a * m + c] * z[lo + c]
            acc += z[lo + a] * row
        out[r] = 0.5 * acc
    return out


@njit(cache=True)
def block_matvec(z, qflat, qoff, blk_starts):
    out = np.empty_like(z)
    n = blk_starts.shape[0] - 1
    for r in range(n):
        lo = blk_starts[r]
        m = blk_starts[r + 1] - lo
        base = qoff[r]
        for a in range(m):
            row = 0.0
            for c in range(m):
                row += qflat[base + a * m + c] * z[lo + c]
            out[lo + a] = row
    return out


@njit(cache=True)
def block_dots(a, b, blk_starts):
    n = blk_starts.shape[0] - 1
    out = np.empty(n)
    for r in range(n):
        acc = 0.0
        for i in range(blk_starts[r], blk_starts[r + 1]):
            acc += a[i] * b[i]
        out[r] = acc
    return out


@njit(cache=True)
def scale_blocks(x, scale, blk_starts):
    out = np.empty_like(x)
    n = blk_starts.shape[0] - 1
    for r in range(n):
        for i in range(blk_starts[r], blk_starts[r + 1]):
            out[i] = scale[r] * x[i]
    return out


@njit(cache=True)
def chain_apply(tau, t, M, N):
    out = np.empty(M * (N + 1))
    for j in range(M):
        base = j * (N + 1)
        tb = j * N
        out[base] = t[tb] - tau
        for k in range(1, N):
            out[base + k] = t[tb + k] - t[tb + k - 1]
        out[base + N] = -t[tb + N - 1]
    return out


@njit(cache=True)
def eta_products(y, M, N):
    out = np.empty(1 + M * N)
    acc = 0.0
    for j in range(M):
        base = j * (N + 1)
        acc += y[base]
        for k in range(N):
            out[1 + j * N + k] = y[base + k] - y[base + k + 1]
    out[0] = -acc
    return out


@njit(cache=True)
def arrow_gram(dms, M, N):
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


@njit(cache=True)
def step_scale(vals, deltas):
    best = np.inf
    for i in range(vals.shape[0]):
        if deltas[i] < 0.0:
            r = -vals[i] / deltas[i]
            if r < best:
                best = r
    return best
