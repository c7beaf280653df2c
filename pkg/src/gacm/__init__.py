"""Generalized additive coefficient models for high-dimensional interaction screening.

Spline-based estimation with adaptive group-lasso selection, a two-step refined
estimator, and simultaneous confidence bands with bootstrap standard errors.
"""

from ._threads import pin_blas_single_thread as _pin

# Replicate-level parallelism is process based; single-threaded BLAS keeps
# every run byte-identical regardless of the thread setting.
_pin()

__version__ = "0.1.0"
