"""Quasi-likelihood families: link, variance, and the derivatives the solver needs.

The loss is Q(mu, y) = integral from mu to y of (y - z)/V(z) dz, normalized so
Q(y, y) = 0.  Derivatives are taken with respect to the linear predictor eta:
q1 = -(y - mu) * rho1(eta) with rho_j(eta) = (dmu/deta)^j / V(mu), and the
Fisher weight is rho2 (the expected second derivative; exact for canonical
links).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = ["Family", "LOGIT", "GAUSSIAN", "family_from_name", "MEAN_CLAMP"]

# Logit means are clamped this far from {0, 1} so losses stay finite on
# separable subproblems.
MEAN_CLAMP = 1e-12


@dataclass(frozen=True)
class Family:
    """A quasi-likelihood family identified by its kind string."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("bernoulli-logit", "gaussian-identity"):
            raise ValueError(f"unknown family kind: {self.kind!r}")

    @property
    def canonical(self) -> bool:
        return True

    def mean(self, eta):
        """Inverse link, clamped to the open mean domain."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "bernoulli-logit":
            return np.clip(expit(eta), MEAN_CLAMP, 1.0 - MEAN_CLAMP)
        return eta

    def q_derivs(self, eta, y):
        """Return (q1, w): gradient of Q in eta and the Fisher weight."""
        eta = np.asarray(eta, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "bernoulli-logit":
            mu = self.mean(eta)
            return mu - y, mu * (1.0 - mu)
        return eta - y, np.ones_like(eta)

    def fisher_weight(self, eta):
        """Expected-information weight, identical to the ``w`` of q_derivs."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "bernoulli-logit":
            mu = self.mean(eta)
            return mu * (1.0 - mu)
        return np.ones_like(eta)

    def q_loss(self, mu, y):
        """Pointwise negative quasi-likelihood, zero at mu == y."""
        mu = np.asarray(mu, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "bernoulli-logit":
            mu = np.clip(mu, MEAN_CLAMP, 1.0 - MEAN_CLAMP)
            return -(y * np.log(mu) + (1.0 - y) * np.log1p(-mu))
        return 0.5 * (y - mu) ** 2


LOGIT = Family("bernoulli-logit")
GAUSSIAN = Family("gaussian-identity")

_BY_NAME = {
    "bernoulli-logit": LOGIT,
    "logit": LOGIT,
    "binomial": LOGIT,
    "gaussian-identity": GAUSSIAN,
    "gaussian": GAUSSIAN,
    "identity": GAUSSIAN,
}


def family_from_name(name: str) -> Family:
    try:
        return _BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(f"unsupported family {name!r}; choose from {sorted(set(_BY_NAME))}") from None
