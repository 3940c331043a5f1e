"""Explicit fixed-plan solution for linear pollution and quadratic effort costs.

Valid when the social cost is linear, ``Lambda(x) = lam x``, every producer has
``p_i(q) = p_i q`` and ``h_i(a) = h_i a^2 / 2`` on ``[0, A_i]``, and
``M_i >= lam T`` for all i. Used as an independent oracle for the PDE solver
and the simulator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelInputError, RegimeError


@dataclass(frozen=True)
class ExplicitSpec:
    pollution_rates: Sequence[float]
    productions: Sequence[float]
    curvatures: Sequence[float]
    effort_caps: Sequence[float]
    lam: float
    sigma: float
    rho: float
    T: float
    production_costs: Sequence[float] = ()
    ell0: float = 0.0

    def __post_init__(self):
        arrays = {}
        for name in ("pollution_rates", "productions", "curvatures", "effort_caps"):
            arr = np.asarray(getattr(self, name), float).reshape(-1)
            if np.any(arr <= 0):
                raise ModelInputError(f"{name} must be positive")
            arrays[name] = arr
        n = arrays["productions"].size
        if any(a.size != n for a in arrays.values()):
            raise ModelInputError("per-producer arrays must have equal length")
        costs = np.asarray(self.production_costs or np.zeros(n), float).reshape(-1)
        if costs.size != n or np.any(costs < 0):
            raise ModelInputError("production_costs must be nonnegative, one per producer")
        arrays["production_costs"] = costs
        for name, arr in arrays.items():
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        # sigma = 0 is a legitimate deterministic limit
        if not (self.lam > 0 and self.rho > 0 and self.T > 0 and self.sigma >= 0):
            raise ModelInputError("lam, rho, T must be positive and sigma >= 0")

    @property
    def emissions(self) -> np.ndarray:
        """p_i q_i."""
        return self.pollution_rates * self.productions

    @property
    def z(self) -> np.ndarray:
        e2 = self.emissions**2
        return self.lam * e2 / (self.sigma**2 * self.rho * self.curvatures + e2)

    @property
    def M(self) -> np.ndarray:
        e = self.emissions
        h = self.curvatures
        return self.effort_caps * h * (self.sigma**2 * self.rho * h + e**2) / e**3

    @property
    def mu(self) -> float:
        return float(np.sum(self.emissions))

    @property
    def C(self) -> float:
        e = self.emissions
        h = self.curvatures
        return float(np.sum(e**4 / (2 * h * (self.sigma**2 * self.rho * h + e**2))))

    @property
    def D(self) -> float:
        return float(2 * np.sum(self.production_costs))


def check_regime(spec: ExplicitSpec):
    """Return ``(M, valid)`` with ``valid`` iff ``min M_i >= lam T``."""
    M = spec.M
    return M, bool(np.min(M) >= spec.lam * spec.T)


def _require(spec: ExplicitSpec):
    M, ok = check_regime(spec)
    if not ok:
        raise RegimeError(f"closed form needs min M_i >= lam T; got M={M}, lam T={spec.lam * spec.T}")


def closed_policy(spec: ExplicitSpec, s):
    """Sensitivities ``z_i (s - T)`` and efforts ``(T - s) z_i p_i q_i / h_i``."""
    _require(spec)
    s = np.asarray(s, float)
    if np.any(s < 0) or np.any(s > spec.T):
        raise ModelInputError("s must lie in [0, T]")
    tau = (spec.T - s)[..., None]
    Z = -spec.z * tau
    a = tau * spec.z * spec.emissions / spec.curvatures
    return Z, a


def closed_value(spec: ExplicitSpec, t, ell):
    _require(spec)
    tau = spec.T - np.asarray(t, float)
    lam = spec.lam
    return (
        spec.D * tau
        + lam * (np.asarray(ell, float) - spec.ell0) * tau
        + 0.5 * lam * spec.mu * tau**2
        - spec.C * lam**2 * tau**3 / 3.0
    )


def closed_slope(spec: ExplicitSpec, t):
    _require(spec)
    return spec.lam * (spec.T - np.asarray(t, float))
