"""Timing comparison of the numba and pure-numpy per-iteration kernels.

Runs every kernel on a corpus-sized instance and on a larger synthetic one,
then prints microseconds per call for both backends and the speedup.  The
numpy path is the one selected at import time by RMPC_NO_NUMBA=1; here both
implementations are imported directly so a single run covers the pair.

Usage: python benchmarks/bench_kernels.py [--min-time SECONDS]
"""

import argparse
import time

import numpy as np

from rmpc.kernels import numba_impl, numpy_impl


def packed_blocks(rng, M, N, n_x, n_u):
    """Synthetic (starts, qflat, qoff) with corpus-like per-stage blocks."""
    dims = [n_x + n_u] * N + [n_x]
    starts = [0]
    qoff = [0]
    pieces = []
    for _ in range(M):
        for d in dims:
            starts.append(starts[-1] + d)
            qoff.append(qoff[-1] + d * d)
            G = rng.standard_normal((d, d))
            pieces.append((G @ G.T + np.eye(d)).ravel())
    return (
        np.asarray(starts, dtype=np.int64),
        np.concatenate(pieces),
        np.asarray(qoff, dtype=np.int64),
    )


def cases(M, N, n_x, n_u, seed=0):
    rng = np.random.default_rng(seed)
    starts, qflat, qoff = packed_blocks(rng, M, N, n_x, n_u)
    n_z = int(starts[-1])
    n_rows = M * (N + 1)
    z = rng.standard_normal(n_z)
    y = rng.standard_normal(n_rows)
    mu = rng.uniform(0.5, 2.0, n_rows)
    t = rng.standard_normal(M * N)
    vals = rng.uniform(0.1, 2.0, n_z)
    deltas = rng.standard_normal(n_z)
    return [
        ("quad_forms", (z, qflat, qoff, starts)),
        ("block_matvec", (z, qflat, qoff, starts)),
        ("block_dots", (z, z.copy(), starts)),
        ("scale_blocks", (z, mu, starts)),
        ("chain_apply", (0.7, t, M, N)),
        ("eta_products", (y, M, N)),
        ("arrow_gram", (mu, M, N)),
        ("step_scale", (vals, deltas)),
    ]


def time_call(fn, args, min_time):
    fn(*args)  # warm-up; compiles on the numba path
    number = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        elapsed = time.perf_counter() - t0
        if elapsed >= min_time:
            return elapsed / number
        number = max(number * 2, int(number * min_time / max(elapsed, 1e-9)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--min-time", type=float, default=0.2, help="seconds per measurement")
    args = ap.parse_args()

    sizes = [
        ("corpus-sized (M=8, N=5, n_x=3, n_u=2)", cases(8, 5, 3, 2)),
        ("large (M=64, N=40, n_x=8, n_u=4)", cases(64, 40, 8, 4)),
    ]
    for label, kernel_cases in sizes:
        print(f"\n{label}")
        print(f"{'kernel':<14} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
        for name, call_args in kernel_cases:
            ref = getattr(numpy_impl, name)(*call_args)
            fast = getattr(numba_impl, name)(*call_args)
            np.testing.assert_allclose(fast, ref, rtol=1e-12, atol=1e-12)
            t_np = time_call(getattr(numpy_impl, name), call_args, args.min_time)
            t_nb = time_call(getattr(numba_impl, name), call_args, args.min_time)
            print(f"{name:<14} {t_np * 1e6:>10.2f} {t_nb * 1e6:>10.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
