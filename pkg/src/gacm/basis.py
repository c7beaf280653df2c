"""Raw and empirically centered B-spline bases on [0, 1].

The raw basis is the standard order-q B-spline system over a knot vector with
boundary knots 0 and 1 at full multiplicity.  The centered system subtracts a
fitted multiple of the first basis function from each of the others so that
every retained function has exact zero sample mean over the fitting column;
the first function is dropped because centering annihilates it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CenteringError, DegenerateDataError, DegenerateDataWarning, DomainError

__all__ = [
    "KnotVector",
    "CenteredBasis",
    "make_knots",
    "eval_raw",
    "eval_raw_many",
    "fit_centering",
]


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Order-q knot vector: boundary knots 0 and 1 with multiplicity q plus interior knots."""

    order: int
    interior: np.ndarray

    def __post_init__(self):
        if self.order < 2:
            raise ValueError(f"spline order must be >= 2, got {self.order}")
        interior = np.asarray(self.interior, dtype=float)
        if interior.ndim != 1:
            raise ValueError("interior knots must be a 1-d array")
        if interior.size and (interior.min() <= 0.0 or interior.max() >= 1.0):
            raise ValueError("interior knots must lie strictly inside (0, 1)")
        if interior.size > 1 and np.any(np.diff(interior) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior", interior)

    @property
    def n_interior(self) -> int:
        return self.interior.size

    @property
    def n_basis(self) -> int:
        """Number of raw basis functions, N + q."""
        return self.n_interior + self.order

    @cached_property
    def full(self) -> np.ndarray:
        q = self.order
        return np.concatenate([np.zeros(q), self.interior, np.ones(q)])


def make_knots(x_column: np.ndarray, n_interior: int, order: int) -> KnotVector:
    """Place interior knots at the j/(N+1) empirical quantiles of ``x_column``.

    Duplicate or boundary-colliding quantiles are collapsed, reducing N with a
    :class:`DegenerateDataWarning`; a column with fewer than two distinct
    values cannot support any basis and raises.
    """
    x = np.asarray(x_column, dtype=float)
    if n_interior < 0:
        raise ValueError(f"n_interior must be >= 0, got {n_interior}")
    if np.unique(x).size < 2:
        raise DegenerateDataError("column is constant; cannot build a spline basis")
    if n_interior == 0:
        return KnotVector(order, np.empty(0))
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    candidates = np.quantile(x, probs)
    inside = candidates[(candidates > 0.0) & (candidates < 1.0)]
    knots = np.unique(inside)
    if knots.size < n_interior:
        warnings.warn(
            f"collapsed duplicate/boundary quantile knots: requested {n_interior}, kept {knots.size}",
            DegenerateDataWarning,
            stacklevel=2,
        )
    return KnotVector(order, knots)


def _raw_design(full_knots: np.ndarray, order: int, x: np.ndarray) -> np.ndarray:
    """Iterative Cox-de Boor recursion, vectorized over evaluation points.

    Intervals are half-open on the right except the last nonzero-width one,
    which is closed so the basis is a partition of unity on all of [0, 1].
    """
    t = full_knots
    m = x.shape[0]
    right_end = t[-1]
    b = np.zeros((m, t.size - 1))
    for j in range(t.size - 1):
        if t[j] < t[j + 1]:
            inside = (x >= t[j]) & (x < t[j + 1])
            if t[j + 1] == right_end:
                inside |= x == right_end
            b[inside, j] = 1.0
    for k in range(2, order + 1):
        nb = t.size - k
        bk = np.zeros((m, nb))
        for j in range(nb):
            dl = t[j + k - 1] - t[j]
            dr = t[j + k] - t[j + 1]
            acc = None
            if dl > 0.0:
                acc = (x - t[j]) / dl * b[:, j]
            if dr > 0.0:
                right = (t[j + k] - x) / dr * b[:, j + 1]
                acc = right if acc is None else acc + right
            if acc is not None:
                bk[:, j] = acc
        b = bk
    return b


def _check_domain(x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DomainError(f"evaluation points must lie in [0, 1], got range [{x.min()}, {x.max()}]")
    return x


def eval_raw_many(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """Evaluate all raw basis functions at each point; returns (len(x), J)."""
    return _raw_design(kv.full, kv.order, _check_domain(x))


def eval_raw(kv: KnotVector, x: float) -> np.ndarray:
    """Evaluate all raw basis functions at a scalar point; returns (J,)."""
    return eval_raw_many(kv, np.array([x]))[0]


@dataclass(frozen=True, eq=False)
class CenteredBasis:
    """Centered B-spline system fitted to a training column.

    Entry j-1 of an evaluation equals scale * (b_j(x) - ratios[j-1] * b_1(x))
    for j = 2..J; the first raw function is dropped since its centered version
    vanishes identically.  ``ratios`` are frozen at fit time and reused for
    every later evaluation.
    """

    knots: KnotVector
    scale: float
    ratios: np.ndarray

    @property
    def n_funcs(self) -> int:
        return self.knots.n_basis - 1

    def eval_many(self, x: np.ndarray) -> np.ndarray:
        raw = eval_raw_many(self.knots, x)
        return self.scale * (raw[:, 1:] - np.outer(raw[:, 0], self.ratios[1:]))

    def eval(self, x: float) -> np.ndarray:
        return self.eval_many(np.array([x]))[0]


def fit_centering(kv: KnotVector, x_column: np.ndarray) -> CenteredBasis:
    """Fit centering ratios (sample-mean analogue of the population centering)."""
    x = _check_domain(x_column)
    raw = _raw_design(kv.full, kv.order, x)
    means = raw.mean(axis=0)
    if means[0] <= 0.0:
        raise CenteringError("first raw basis function has zero sample mean on the training column")
    ratios = means / means[0]
    n = kv.n_interior
    scale = float(np.sqrt(n)) if n > 0 else 1.0
    return CenteredBasis(knots=kv, scale=scale, ratios=ratios)
