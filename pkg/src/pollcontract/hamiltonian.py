"""Running Hamiltonian of the regulator's HJB equation and its minimizers.

For a value-function slope ``alpha`` the regulator chooses a feasible plan and
a sensitivity ``z_i`` per producer. Given the plan, the choice of ``z``
decouples across producers because producer i's best-response effort depends
only on ``(q_i, z_i)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelInputError
from .network import DEFAULT_TOL, NetworkSpec, Plan, is_feasible, search_plans
from .producers import MarketParams, ProducerSpec


@dataclass(frozen=True, eq=False)
class OptimizerSelection:
    z_star: np.ndarray
    plan_star: Plan
    effort_star: np.ndarray
    g_value: float


def inner_z_min(prod: ProducerSpec, params: MarketParams, alpha: float, q_i: float):
    """Optimal sensitivity for one producer and the minimized partial value."""
    q_i = prod.check_production(q_i)
    z, _, value = prod.effort.inner_z(alpha, prod.pollution(q_i), params.risk)
    return float(z), float(value)


def plan_terms(producers: Sequence[ProducerSpec], params: MarketParams, alpha, q):
    """Per-producer minimization for every (alpha, plan) pair by broadcasting.

    ``q`` has a trailing axis of length N. Returns ``(z, a, total)`` where
    ``total`` already sums ``inner value + 2 c_i(q_i)`` over producers.
    """
    q = np.asarray(q, float)
    alpha = np.asarray(alpha, float)
    shape = np.broadcast_shapes(alpha.shape, q.shape[:-1])
    z = np.empty(shape + (len(producers),))
    a = np.empty_like(z)
    total = np.zeros(shape)
    for i, prod in enumerate(producers):
        p = prod.pollution(q[..., i])
        zi, ai, vi = prod.effort.inner_z(alpha, p, params.risk)
        z[..., i] = zi
        a[..., i] = ai
        total = total + vi + 2.0 * prod.cost(q[..., i])
    return z, a, total


def plan_objective(net: NetworkSpec, producers, params: MarketParams, alpha: float, plan: Plan) -> float:
    if not is_feasible(net, plan, DEFAULT_TOL):
        raise ModelInputError(f"plan is not feasible: {plan}")
    q = np.clip(plan.q, 0.0, net.capacity)
    return float(plan_terms(producers, params, alpha, q)[2])


def minimize_g(
    net: NetworkSpec,
    producers,
    params: MarketParams,
    alpha: float,
    resolution: int = 25,
    n_starts: int = 4,
) -> OptimizerSelection:
    """Minimize the running Hamiltonian over feasible plans and sensitivities."""
    if len(producers) != net.n_nodes:
        raise ModelInputError("need one producer per node")

    def objective(q, phi):
        return plan_terms(producers, params, alpha, q)[2]

    plan, value = search_plans(net, objective, resolution=resolution, n_starts=n_starts)
    z, a, _ = plan_terms(producers, params, alpha, plan.q)
    return OptimizerSelection(z, plan, a, value)


def hamiltonian_G(net, producers, params: MarketParams, ell: float, alpha: float, gamma: float, **search) -> float:
    sel = minimize_g(net, producers, params, alpha, **search)
    return sel.g_value + 0.5 * gamma * params.sigma**2 + float(params.penalty(ell))


class PlanCatalog:
    """Finite set of candidate plans standing in for the feasible set.

    Built from the optimizers of :func:`minimize_g` on a grid of slopes, so the
    minimum over the catalog matches the exact infimum at those slopes and is an
    upper bound elsewhere. Evaluating a catalog is fully vectorized, which is
    what makes the explicit HJB sweep affordable; the result is a memoization of
    the plan search over slopes.
    """

    def __init__(self, plans: Sequence[Plan], producers, params: MarketParams):
        plans = sorted(set(plans), key=lambda pl: (tuple(pl.phi), tuple(pl.q)))
        if not plans:
            raise ModelInputError("catalog needs at least one plan")
        self.plans = plans
        self.producers = list(producers)
        self.params = params
        self.q = np.array([pl.q for pl in plans])
        self.phi = np.array([pl.phi for pl in plans]).reshape(len(plans), -1)
        self.pollution = np.stack(
            [prod.pollution(self.q[:, i]) for i, prod in enumerate(self.producers)], axis=-1
        )
        self.max_drift = float(np.max(np.sum(self.pollution, axis=1)))

    def __len__(self):
        return len(self.plans)

    @classmethod
    def from_slopes(cls, net, producers, params, alphas, resolution=25, n_starts=4):
        plans = [minimize_g(net, producers, params, a, resolution, n_starts).plan_star for a in alphas]
        return cls(plans, producers, params)

    def evaluate(self, alpha):
        """Return ``(g, index, z)`` for an array of slopes.

        Ties in ``g`` resolve to the lowest catalog index, i.e. the
        lexicographically smallest flow vector.
        """
        alpha = np.asarray(alpha, float)
        z, _, total = plan_terms(self.producers, self.params, alpha[..., None], self.q)
        idx = np.argmin(total, axis=-1)
        g = np.take_along_axis(total, idx[..., None], axis=-1)[..., 0]
        z = np.take_along_axis(z, idx[..., None, None], axis=-2)[..., 0, :]
        return g, idx, z


def default_slopes(params: MarketParams, n: int = 48) -> np.ndarray:
    """Slopes at which the catalog is built: [0, lam*T], denser near zero.

    With a social cost of slope at most ``lam`` the value function's spatial
    derivative stays in ``[0, lam * T]``.
    """
    top = 1.02 * params.social_cost.slope_bound * params.horizon
    if top == 0:
        return np.zeros(1)
    return top * (np.arange(n + 1) / n) ** 2
