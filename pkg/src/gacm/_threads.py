"""Single-threaded BLAS pinning for byte-reproducible results.

Parallelism in this package is process based (replicates, bootstrap draws);
threaded BLAS reductions inside a replicate would make results depend on
where the replicate happens to run.  Pinning is two-layered: environment
defaults cover libraries not yet loaded, and threadpoolctl caps pools of
libraries that were already initialized before we got imported.
"""

import os

_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

_limiter = None


def pin_blas_single_thread():
    """Idempotently cap every known BLAS/OpenMP pool at one thread."""
    global _limiter
    for var in _ENV_VARS:
        os.environ.setdefault(var, "1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    # Keeping the limiter referenced holds the cap for the process lifetime.
    _limiter = threadpool_limits(limits=1)
