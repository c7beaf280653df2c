"""Simultaneous confidence bands: thresholds, plug-in SDs, and bootstrap SDs.

Bands are built on a fixed grid of interior points.  The threshold comes from
the closed-form extreme-value approximation; standard deviations come either
from the plug-in information-matrix formula or from bootstrap replicates
(plain sample SD, or the resample-count delta-method SD of the smoothed
estimate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .design import Dataset
from .errors import GacmError, NumericalError, StructuralError
from .family import Family
from .solver import FitReport, _solve_spd
from .twostep import StepTwoFit, fit_initial, fit_second_step

__all__ = [
    "Band",
    "BootstrapRun",
    "scb_grid",
    "scb_threshold",
    "sigma_plugin",
    "bootstrap_curves",
    "sd_unsmoothed",
    "sd_smoothed",
    "build_band",
]


def scb_grid(n_points_minus_1: int) -> np.ndarray:
    """Equally spaced interior grid of L+1 points (endpoints excluded)."""
    L = n_points_minus_1
    if L < 1:
        raise ValueError("grid needs at least two points")
    return (np.arange(L + 1) + 1.0) / (L + 2.0)


def scb_threshold(L: int, alpha: float) -> float:
    """Extreme-value band threshold Q_L(alpha) over L+1 grid points."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if L < 1:
        raise ValueError(f"need L >= 1, got {L}")
    two_log = 2.0 * math.log(L + 1.0)
    d = 1.0 - (math.log(-0.5 * math.log(1.0 - alpha)) + 0.5 * (math.log(math.log(L + 1.0)) + math.log(4.0 * math.pi))) / two_log
    return math.sqrt(two_log) * d


def sigma_plugin(fit: StepTwoFit, fam: Family, x: float, l: int) -> float:
    """Plug-in pointwise SD of the second-step curve for group l at x.

    Inverts the Fisher information of the second-step design at the fitted
    linear predictor and evaluates the quadratic form of the basis vector.
    """
    w = fam.fisher_weight(fit.eta_hat)
    Z2 = fit.design.Z
    info = Z2.T @ (Z2 * w[:, None])
    vec = np.zeros(Z2.shape[1])
    pos = fit.i1.index(l) if l in fit.i1 else None
    if pos is None:
        raise StructuralError(f"group {l} is not part of the fit")
    vec[fit.design.layout.group_cols(pos)] = fit.basis.eval_many(np.array([float(x)]))[0]
    solved = _solve_spd(info, vec, FitReport())
    return float(np.sqrt(max(vec @ solved, 0.0)))


@dataclass(eq=False)
class BootstrapRun:
    """Curves and resample counts from a nonparametric bootstrap of the two-step fit."""

    grid: np.ndarray
    i1: tuple
    curves: dict
    counts: np.ndarray
    seed: int
    n_requested: int
    n_dropped: int
    drop_messages: list = field(default_factory=list)

    @property
    def n_replicates(self) -> int:
        return self.counts.shape[0]


def _rep_seed(seed, j):
    # Per-replicate entropy: flatten structured seeds so nested tuples never
    # reach numpy's SeedSequence.
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed) + (j,)
    return (int(seed), j)


def _one_replicate(ds, i1, fam, q, c, knots_per_k, grid, seed, j, ks):
    rng = np.random.default_rng(_rep_seed(seed, j))
    rows = rng.integers(0, ds.n, size=ds.n)
    counts = np.bincount(rows, minlength=ds.n)
    ds_b = ds.take(rows)
    try:
        init = fit_initial(ds_b, i1, fam, q=q, c=c)
        curves = {}
        for k in ks:
            fit = fit_second_step(ds_b, i1, init, k, knots_per_k[k], fam)
            for l in i1:
                curves[(l, k)] = fit.curve(l, grid)
        return counts, curves, None
    except (GacmError, np.linalg.LinAlgError) as exc:
        return None, None, f"replicate {j}: {exc}"


def bootstrap_curves(
    ds: Dataset,
    i1,
    fam: Family,
    knots_per_k,
    B: int,
    grid: np.ndarray,
    seed: int,
    *,
    q: int = 4,
    c: float = 2.0,
    threads: int = 1,
    ks=None,
) -> BootstrapRun:
    """Resample rows with replacement and rerun the two-step fit on fixed i1.

    Each replicate draws its random stream from (seed, j), so results are
    identical for any thread count.  Replicates whose refit fails are dropped;
    more than 10% drops is an error.  ``ks`` restricts the second step to a
    subset of covariates (all by default).
    """
    from ._threads import pin_blas_single_thread

    pin_blas_single_thread()
    i1 = tuple(int(l) for l in i1)
    if B < 2:
        raise ValueError(f"need at least two bootstrap replicates, got {B}")
    grid = np.asarray(grid, dtype=float)
    knots_per_k = tuple(int(v) for v in knots_per_k)
    if len(knots_per_k) != ds.d:
        raise StructuralError("need one second-step knot count per covariate")
    ks = tuple(range(ds.d)) if ks is None else tuple(int(k) for k in ks)

    if threads > 1:
        results = Parallel(n_jobs=threads, backend="loky")(
            delayed(_one_replicate)(ds, i1, fam, q, c, knots_per_k, grid, seed, j, ks) for j in range(B)
        )
    else:
        results = [_one_replicate(ds, i1, fam, q, c, knots_per_k, grid, seed, j, ks) for j in range(B)]

    kept_counts = []
    kept_curves = []
    drops = []
    for counts, curves, err in results:
        if err is None:
            kept_counts.append(counts)
            kept_curves.append(curves)
        else:
            drops.append(err)
    if len(drops) > 0.1 * B:
        raise NumericalError(f"{len(drops)} of {B} bootstrap replicates failed: {drops[:3]}")
    if len(kept_counts) < 2:
        raise NumericalError("fewer than two surviving bootstrap replicates")

    curve_mats = {}
    for key in kept_curves[0]:
        curve_mats[key] = np.stack([c[key] for c in kept_curves])
    return BootstrapRun(
        grid=grid,
        i1=i1,
        curves=curve_mats,
        counts=np.stack(kept_counts),
        seed=seed,
        n_requested=B,
        n_dropped=len(drops),
        drop_messages=drops,
    )


def sd_unsmoothed(run: BootstrapRun, l: int, k: int) -> np.ndarray:
    """Plain sample SD of the replicate curves, per grid point."""
    return run.curves[(l, k)].std(axis=0, ddof=1)


def sd_smoothed(run: BootstrapRun, l: int, k: int):
    """Smoothed-bootstrap center and its delta-method SD, per grid point.

    The SD aggregates, over observations, the squared bootstrap covariance
    between the resample counts and the replicate curves.
    """
    curves = run.curves[(l, k)]
    B = curves.shape[0]
    center = curves.mean(axis=0)
    count_dev = run.counts - run.counts.mean(axis=0)
    cov = count_dev.T @ (curves - center) / B
    sd = np.sqrt((cov**2).sum(axis=0))
    # Grid points where every replicate agrees have exactly zero covariance;
    # mean subtraction would otherwise leave rounding residue.
    flat = np.ptp(curves, axis=0) == 0.0
    if flat.any():
        center = np.where(flat, curves[0], center)
        sd = np.where(flat, 0.0, sd)
    return center, sd


@dataclass(eq=False)
class Band:
    """A simultaneous confidence band over a fixed grid."""

    grid: np.ndarray
    center: np.ndarray
    sd: np.ndarray
    threshold: float
    lower: np.ndarray
    upper: np.ndarray

    def covers(self, truth: np.ndarray) -> bool:
        """True when the curve lies inside the band at every grid point."""
        truth = np.asarray(truth, dtype=float)
        return bool(np.all((truth >= self.lower) & (truth <= self.upper)))


def build_band(grid: np.ndarray, center: np.ndarray, sd: np.ndarray, L: int, alpha: float) -> Band:
    """Assemble center +- sd * Q_L(alpha) into a Band."""
    grid = np.asarray(grid, dtype=float)
    center = np.asarray(center, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if not (grid.shape == center.shape == sd.shape):
        raise StructuralError("grid, center and sd must have matching shapes")
    if grid.shape[0] != L + 1:
        raise StructuralError(f"expected {L + 1} grid points, got {grid.shape[0]}")
    if np.any(sd < 0):
        raise StructuralError("pointwise SDs must be nonnegative")
    q = scb_threshold(L, alpha)
    return Band(grid=grid, center=center, sd=sd, threshold=q, lower=center - sd * q, upper=center + sd * q)
