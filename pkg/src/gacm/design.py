"""Datasets, covariate rescaling, and grouped design matrices.

A grouped design has one block per interaction covariate T_l.  Each block is
[T_l | E_1 * T_l | ... | E_d * T_l] where E_k holds the centered feature
columns of continuous covariate k (spline functions, or a single centered
linear column for covariates flagged as discrete/linear).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .basis import CenteredBasis, fit_centering, make_knots
from .errors import DegenerateDataError, StructuralError

__all__ = [
    "Dataset",
    "LinearColumn",
    "GroupLayout",
    "GroupedDesign",
    "rescale",
    "make_dataset",
    "fit_bases",
    "build_design",
    "build_step2_design",
]


def rescale(X_raw: np.ndarray, names=None):
    """Affine min-max map of each column onto [0, 1]; returns (X, params).

    ``params`` is a tuple of per-column (min, max) pairs for prediction-time
    reuse.  A constant column cannot be rescaled and raises.
    """
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim != 2:
        raise StructuralError("X must be a 2-d array")
    lo = X_raw.min(axis=0)
    hi = X_raw.max(axis=0)
    flat = np.nonzero(hi <= lo)[0]
    if flat.size:
        k = int(flat[0])
        label = names[k] if names is not None else f"column {k}"
        raise DegenerateDataError(f"degenerate covariate: {label} is constant")
    X = (X_raw - lo) / (hi - lo)
    params = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    return X, params


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response, rescaled continuous covariates, and interaction covariates."""

    y: np.ndarray
    X: np.ndarray
    T: np.ndarray
    rescale_params: tuple
    x_names: tuple
    t_names: tuple
    linear_flags: tuple

    def __post_init__(self):
        n = self.y.shape[0]
        if self.X.shape[0] != n or self.T.shape[0] != n:
            raise StructuralError("y, X and T must have the same number of rows")
        if n < 2:
            raise StructuralError("need at least two observations")
        if not (np.isfinite(self.y).all() and np.isfinite(self.X).all() and np.isfinite(self.T).all()):
            raise StructuralError("missing or non-finite values are not supported")
        if self.X.size and (self.X.min() < 0.0 or self.X.max() > 1.0):
            raise StructuralError("X must be rescaled to [0, 1]")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.T.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row-subset view (used by the bootstrap); rescale params carry over."""
        return Dataset(
            y=self.y[rows],
            X=self.X[rows],
            T=self.T[rows],
            rescale_params=self.rescale_params,
            x_names=self.x_names,
            t_names=self.t_names,
            linear_flags=self.linear_flags,
        )


def make_dataset(y, X_raw, T, *, linear_flags=None, x_names=None, t_names=None, rescaled=False) -> Dataset:
    """Assemble a Dataset, rescaling X unless ``rescaled`` says it already is."""
    y = np.asarray(y, dtype=float).ravel()
    X_raw = np.asarray(X_raw, dtype=float)
    T = np.asarray(T, dtype=float)
    d = X_raw.shape[1]
    p = T.shape[1]
    x_names = tuple(x_names) if x_names is not None else tuple(f"x{k + 1}" for k in range(d))
    t_names = tuple(t_names) if t_names is not None else tuple(f"t{l + 1}" for l in range(p))
    if rescaled:
        X, params = X_raw, tuple((0.0, 1.0) for _ in range(d))
    else:
        X, params = rescale(X_raw, names=x_names)
    flags = tuple(bool(f) for f in linear_flags) if linear_flags is not None else (False,) * d
    if len(flags) != d:
        raise StructuralError("linear_flags length must equal the number of X columns")
    return Dataset(y=y, X=X, T=T, rescale_params=params, x_names=x_names, t_names=t_names, linear_flags=flags)


@dataclass(frozen=True, eq=False)
class LinearColumn:
    """Single centered linear feature for a covariate that enters linearly."""

    center: float

    @property
    def n_funcs(self) -> int:
        return 1

    def eval_many(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center)[:, None]

    def eval(self, x: float) -> np.ndarray:
        return self.eval_many(np.array([x]))[0]


def fit_bases(ds: Dataset, n_interior: int, order: int):
    """Fit one centered feature system per continuous covariate.

    Spline-flagged covariates get quantile knots and empirical centering;
    linear-flagged covariates get a single sample-centered linear column.
    """
    bases = []
    for k in range(ds.d):
        col = ds.X[:, k]
        if ds.linear_flags[k]:
            bases.append(LinearColumn(center=float(col.mean())))
        else:
            kv = make_knots(col, n_interior, order)
            bases.append(fit_centering(kv, col))
    return tuple(bases)


@dataclass(frozen=True)
class GroupLayout:
    """Column bookkeeping for a grouped design.

    Every group has the same internal structure: an optional intercept column
    followed by one block per covariate.  ``labels`` maps group position to
    the original T-column index (identity for full designs).
    """

    n_groups: int
    block_sizes: tuple
    intercept: bool = True
    labels: tuple = None

    def __post_init__(self):
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(self.n_groups)))
        if len(self.labels) != self.n_groups:
            raise StructuralError("labels must have one entry per group")

    @property
    def group_size(self) -> int:
        return int(self.intercept) + sum(self.block_sizes)

    @property
    def total_cols(self) -> int:
        return self.n_groups * self.group_size

    def group_cols(self, g: int) -> np.ndarray:
        start = g * self.group_size
        return np.arange(start, start + self.group_size)

    def groups(self) -> tuple:
        return tuple(self.group_cols(g) for g in range(self.n_groups))

    def intercept_col(self, g: int):
        return g * self.group_size if self.intercept else None

    def block_cols(self, g: int, k: int) -> np.ndarray:
        start = g * self.group_size + int(self.intercept) + sum(self.block_sizes[:k])
        return np.arange(start, start + self.block_sizes[k])


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Dense design matrix plus its layout and the feature systems behind it."""

    Z: np.ndarray
    layout: GroupLayout
    bases: tuple

    @cached_property
    def group_index(self):
        return self.layout.groups()


def build_design(ds: Dataset, bases, groups=None) -> GroupedDesign:
    """Assemble the full grouped design Z from fitted feature systems.

    ``groups`` restricts the design to a subset of T columns (used for
    post-selection refits); the layout then carries the original labels.
    """
    if len(bases) != ds.d:
        raise StructuralError(f"need one basis per covariate: got {len(bases)} for d={ds.d}")
    labels = tuple(range(ds.p)) if groups is None else tuple(int(l) for l in groups)
    feats = [b.eval_many(ds.X[:, k]) for k, b in enumerate(bases)]
    sizes = tuple(f.shape[1] for f in feats)
    layout = GroupLayout(n_groups=len(labels), block_sizes=sizes, intercept=True, labels=labels)
    n = ds.n
    Z = np.empty((n, layout.total_cols))
    for g, l in enumerate(labels):
        t_col = ds.T[:, l]
        Z[:, layout.intercept_col(g)] = t_col
        for k in range(ds.d):
            Z[:, layout.block_cols(g, k)] = feats[k] * t_col[:, None]
    return GroupedDesign(Z=Z, layout=layout, bases=tuple(bases))


def build_step2_design(ds: Dataset, selected, k: int, cb: CenteredBasis) -> GroupedDesign:
    """Design for the second-step refit of covariate k: one intercept-free
    block of centered basis columns per selected group."""
    from .errors import NothingSelectedError

    selected = tuple(int(l) for l in selected)
    if not selected:
        raise NothingSelectedError("step-2 design requires a nonempty selected set")
    if not 0 <= k < ds.d:
        raise StructuralError(f"covariate index {k} out of range for d={ds.d}")
    feats = cb.eval_many(ds.X[:, k])
    layout = GroupLayout(
        n_groups=len(selected), block_sizes=(feats.shape[1],), intercept=False, labels=selected
    )
    Z = np.empty((ds.n, layout.total_cols))
    for g, l in enumerate(selected):
        Z[:, layout.group_cols(g)] = feats * ds.T[:, l][:, None]
    return GroupedDesign(Z=Z, layout=layout, bases=(cb,))
