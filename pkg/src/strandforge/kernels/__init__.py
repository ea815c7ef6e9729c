"""Hot numeric kernels with two interchangeable backends.

The numba backend (jitted loops) is the default; set STRANDFORGE_BACKEND to
"numpy" to force the vectorized pure-numpy fallback, or "numba" to fail hard
when numba is unavailable. `benchmarks/bench_kernels.py` compares the two.
"""

import os

_NAMES = [
    "raster_lines", "splat_scatter", "splat_gather",
    "texture_gather", "texture_scatter",
    "conv2d_fwd", "conv2d_bwd", "conv1d_fwd", "conv1d_bwd",
    "grid_nn_build", "grid_nn_query",
]


def get_backend(name):
    """Return the backend module for an explicit name ("numba" or "numpy")."""
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    if name == "numba":
        from . import numba_backend
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")


_requested = os.environ.get("STRANDFORGE_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"STRANDFORGE_BACKEND={_requested!r}: expected 'numba' or 'numpy'")

if _requested == "numpy":
    BACKEND = "numpy"
    _impl = get_backend("numpy")
else:
    try:
        _impl = get_backend("numba")
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = get_backend("numpy")
        BACKEND = "numpy"

for _n in _NAMES:
    globals()[_n] = getattr(_impl, _n)
del _n, _impl, _requested

__all__ = _NAMES + ["BACKEND", "get_backend"]
