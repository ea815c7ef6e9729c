"""Strand-based hair capture: scalp feature textures decoded into explicit
3D strands, rasterized differentiably and fit to multi-view targets."""

import os

# STRANDFORGE_THREADS caps BLAS/numba parallelism. Must be applied before
# numpy is first imported, so this block sits at the top of the package.
_threads = os.environ.get("STRANDFORGE_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

__version__ = "0.1.0"
