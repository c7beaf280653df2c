"""Post-selection estimation: undersmoothed initial refit and per-covariate second step.

The initial refit uses a deliberately enlarged knot count so its bias is
negligible; the second step re-estimates one covariate's curves at a
BIC-chosen knot count while holding every other fitted component fixed inside
the offset.  An oracle variant feeds true functions into the offsets and is
used for validation only.

All refits here carry a tiny ridge (``STABILIZER_RIDGE``) on the coefficients:
with strong signal the logistic subproblems are frequently separable, and the
unregularized MLE then drifts along a flat likelihood with unbounded curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import fit_centering, make_knots
from .design import Dataset, LinearColumn, build_design, build_step2_design, fit_bases
from .errors import NothingSelectedError, StructuralError
from .family import Family
from .solver import FitReport, GroupCoef, fit_unpenalized

# Coefficient ridge for logit estimation refits: strong-signal binary data
# is frequently quasi-separable, where the unregularized MLE drifts along a
# flat likelihood and weakly identified curve contrasts blow up.  Identity
# fits never separate and stay exact.
STABILIZER_RIDGE = 0.1


def _stabilizer(fam: Family) -> float:
    return STABILIZER_RIDGE if fam.kind == "bernoulli-logit" else 0.0

__all__ = [
    "InitialFit",
    "StepTwoFit",
    "knot_count_initial",
    "fit_initial",
    "fit_second_step",
    "fit_oracle",
    "bic_table",
    "choose_knots_bic",
]


def knot_count_initial(n: int, q: int, c: float) -> int:
    """Undersmoothed interior knot count floor(c * n^(1.01/(2q+1)))."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    return int(math.floor(c * n ** (1.01 / (2 * q + 1)) + 1e-9))


@dataclass(eq=False)
class InitialFit:
    """Unpenalized refit on the selected groups at the undersmoothed knot count."""

    i1: tuple
    order: int
    bases: tuple
    coef: GroupCoef
    layout: object
    report: FitReport

    def _pos(self, l: int) -> int:
        try:
            return self.i1.index(l)
        except ValueError:
            raise StructuralError(f"group {l} is not in the selected set {self.i1}") from None

    def intercept(self, l: int) -> float:
        return float(self.coef.values[self.layout.intercept_col(self._pos(l))])

    def component(self, l: int, k: int, x: np.ndarray) -> np.ndarray:
        """Fitted curve for (group l, covariate k) at the given points."""
        block = self.coef.values[self.layout.block_cols(self._pos(l), k)]
        return self.bases[k].eval_many(np.asarray(x, dtype=float)) @ block

    def background(self, ds: Dataset, i1) -> np.ndarray:
        """Contribution of groups outside the selected set: zero for a fitted model."""
        return np.zeros(ds.n)


def fit_initial(ds: Dataset, i1, fam: Family, q: int = 4, c: float = 2.0) -> InitialFit:
    """Refit the selected groups without penalty at the undersmoothed knot count."""
    i1 = tuple(int(l) for l in i1)
    if not i1:
        raise NothingSelectedError("cannot refit an empty selected set")
    n_ini = knot_count_initial(ds.n, q, c)
    bases = fit_bases(ds, n_ini, q)
    design = build_design(ds, bases, groups=i1)
    coef, report = fit_unpenalized(design, ds.y, fam, ridge=_stabilizer(fam))
    return InitialFit(i1=i1, order=q, bases=bases, coef=coef, layout=design.layout, report=report)


def _component_sums(source, ds: Dataset, i1, *, exclude_k=None, with_intercept: bool):
    """Per-(row, group) sums of fitted/true components, optionally excluding one covariate."""
    out = np.zeros((ds.n, len(i1)))
    for j, l in enumerate(i1):
        acc = np.full(ds.n, source.intercept(l)) if with_intercept else np.zeros(ds.n)
        for k in range(ds.d):
            if k != exclude_k:
                acc = acc + source.component(l, k, ds.X[:, k])
        out[:, j] = acc
    return out


@dataclass(eq=False)
class StepTwoFit:
    """Second-step curves for one covariate plus refitted intercepts."""

    k: int
    i1: tuple
    basis: object
    coef_blocks: np.ndarray
    intercepts: np.ndarray
    offset: np.ndarray
    eta_hat: np.ndarray
    design: object
    qloss: float
    report: FitReport
    intercept_report: FitReport

    def _pos(self, l: int) -> int:
        try:
            return self.i1.index(l)
        except ValueError:
            raise StructuralError(f"group {l} is not in the selected set {self.i1}") from None

    def curve(self, l: int, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.basis.eval_many(x) @ self.coef_blocks[self._pos(l)]

    def intercept(self, l: int) -> float:
        return float(self.intercepts[self._pos(l)])


def _make_step2_basis(ds: Dataset, k: int, n_interior: int, order: int):
    if ds.linear_flags[k]:
        return LinearColumn(center=float(ds.X[:, k].mean()))
    kv = make_knots(ds.X[:, k], n_interior, order)
    return fit_centering(kv, ds.X[:, k])


def _refit_target(ds: Dataset, i1, source, k: int, n_interior: int, order: int, fam: Family) -> StepTwoFit:
    i1 = tuple(int(l) for l in i1)
    if not i1:
        raise NothingSelectedError("cannot run the second step with an empty selected set")
    if not 0 <= k < ds.d:
        raise StructuralError(f"covariate index {k} out of range for d={ds.d}")
    for attr in ("intercept", "component", "background"):
        if not hasattr(source, attr):
            raise StructuralError(f"offset source must provide {attr}()")
    background = np.asarray(source.background(ds, i1), dtype=float)
    T_sel = ds.T[:, list(i1)]

    cb = _make_step2_basis(ds, k, n_interior, order)
    design = build_step2_design(ds, i1, k, cb)
    off_curve = (T_sel * _component_sums(source, ds, i1, exclude_k=k, with_intercept=True)).sum(axis=1)
    off_curve = off_curve + background
    coef, report = fit_unpenalized(design.Z, ds.y, fam, offset=off_curve, ridge=_stabilizer(fam))
    eta_hat = design.Z @ coef.values + off_curve
    qloss = float(fam.q_loss(fam.mean(eta_hat), ds.y).sum())
    blocks = np.stack([coef.values[design.layout.group_cols(g)] for g in range(len(i1))])

    # Separate intercept pass: all fitted component curves move into the offset.
    off_int = (T_sel * _component_sums(source, ds, i1, exclude_k=None, with_intercept=False)).sum(axis=1)
    off_int = off_int + background
    icoef, ireport = fit_unpenalized(T_sel, ds.y, fam, offset=off_int, ridge=_stabilizer(fam))

    return StepTwoFit(
        k=k,
        i1=i1,
        basis=cb,
        coef_blocks=blocks,
        intercepts=icoef.values.copy(),
        offset=off_curve,
        eta_hat=eta_hat,
        design=design,
        qloss=qloss,
        report=report,
        intercept_report=ireport,
    )


def fit_second_step(ds: Dataset, i1, init: InitialFit, k: int, n_interior: int, fam: Family) -> StepTwoFit:
    """Refit covariate k's curves with every other component fixed at the initial fit."""
    return _refit_target(ds, i1, init, k, n_interior, init.order, fam)


def fit_oracle(ds: Dataset, i1, truth, k: int, n_interior: int, fam: Family, order: int = 4) -> StepTwoFit:
    """Second-step fit with offsets built from true functions (simulation only).

    ``truth`` must provide ``intercept(l)``, ``component(l, k, x)`` and
    ``background(ds)`` covering every group the offsets need.
    """
    return _refit_target(ds, i1, truth, k, n_interior, order, fam)


def bic_table(ds: Dataset, i1, init: InitialFit, k: int, q: int, fam: Family):
    """Candidate knot counts with their BIC values and fitted second steps."""
    lo = int(math.floor(ds.n ** (1.0 / (2 * q + 1)) + 1e-9))
    hi = int(math.floor(2.0 * ds.n ** (1.0 / (2 * q + 1)) + 1e-9))
    if hi < lo:
        raise ValueError("empty knot-count range")
    rows = []
    for n_s in range(lo, hi + 1):
        fit = fit_second_step(ds, i1, init, k, n_s, fam)
        bic = 2.0 * fit.qloss + ds.d * (n_s + q) * math.log(ds.n)
        rows.append((n_s, bic, fit))
    return rows


def choose_knots_bic(ds: Dataset, i1, init: InitialFit, k: int, q: int, fam: Family) -> int:
    """BIC-optimal second-step knot count; ties break toward fewer knots."""
    rows = bic_table(ds, i1, init, k, q, fam)
    best_n, best_bic = rows[0][0], rows[0][1]
    for n_s, bic, _ in rows[1:]:
        if bic < best_bic:
            best_n, best_bic = n_s, bic
    return best_n
