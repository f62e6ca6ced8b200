"""Hot per-iteration kernels with a numba fast path and a numpy fallback.

The numba path is the default.  Set RMPC_NO_NUMBA=1 to force the pure-numpy
implementations (useful for debugging and as a baseline for the benchmark in
benchmarks/bench_kernels.py); the fallback also engages automatically when
numba is not installed.
"""

import os
import warnings

_force_numpy = os.environ.get("RMPC_NO_NUMBA", "").strip() not in ("", "0")

if _force_numpy:
    from . import numpy_impl as _impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:  # pragma: no cover - exercised only without numba
        warnings.warn("numba unavailable, falling back to pure-numpy kernels")
        from . import numpy_impl as _impl

BACKEND = _impl.BACKEND

quad_forms = _impl.quad_forms
block_matvec = _impl.block_matvec
block_dots = _impl.block_dots
scale_blocks = _impl.scale_blocks
chain_apply = _impl.chain_apply
eta_products = _impl.eta_products
arrow_gram = _impl.arrow_gram
step_scale = _impl.step_scale

__all__ = [
    "BACKEND",
    "quad_forms",
    "block_matvec",
    "block_dots",
    "scale_blocks",
    "chain_apply",
    "eta_products",
    "arrow_gram",
    "step_scale",
]
