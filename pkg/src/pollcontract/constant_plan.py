"""Best time-invariant plan: minimize the fixed-plan value at the initial level.

Every candidate costs a PDE solve, so candidates are scored in batches on a
grid coarsened 4:1 in space (time step follows from stability), refined by a
pattern search in flow space, and the finalists are re-scored on the full grid.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InfeasibleError, ModelInputError
from .hjb import Grid, drift_bound, fixed_plan_values, solve_fixed_plan
from .network import DEFAULT_TOL, NetworkSpec, Plan, _pattern_search, induced_production, is_feasible, plan_grid
from .producers import MarketParams

log = logging.getLogger(__name__)

COARSEN = 4
_BATCH = 512


def evaluate_vd(net: NetworkSpec, producers, params: MarketParams, plan: Plan, grid: Grid, L0: float) -> float:
    """Fixed-plan value at ``(0, L0)``, without the reservation term."""
    return float(solve_fixed_plan(net, producers, params, plan, grid).value_at(0.0, L0)[0])


def _values_at(producers, params, q, grid: Grid, L0: float) -> np.ndarray:
    out = np.empty(q.shape[0])
    for s in range(0, q.shape[0], _BATCH):
        v = fixed_plan_values(producers, params, q[s : s + _BATCH], grid)
        out[s : s + _BATCH] = [np.interp(L0, grid.ell, row) for row in v]
    return out


@dataclass
class VdResult:
    plan: Plan
    value: float
    candidates: list = field(default_factory=list)  # (plan, value, stage)


def optimize_vd(
    net: NetworkSpec,
    producers,
    params: MarketParams,
    grid: Grid,
    L0: float,
    resolution: int = 9,
    n_finalists: int = 4,
    min_step: float = 1e-4,
) -> VdResult:
    """Minimize the fixed-plan value over feasible constant plans.

    ``resolution`` is the number of flow levels per edge in the sweep;
    ``min_step`` is the final pattern step as a fraction of each flow range.
    Ties rank by value, then lexicographically by flow.
    """
    if len(producers) != net.n_nodes:
        raise ModelInputError("need one producer per node")
    if not grid.ell_min <= L0 <= grid.ell_max:
        raise ModelInputError(f"L0={L0} lies outside the grid")
    coarse = grid.coarsened(COARSEN, params.sigma, drift_bound(producers))
    plans = plan_grid(net, resolution)
    if not plans:
        raise InfeasibleError("no feasible plan on the sweep grid")
    q = np.array([pl.q for pl in plans])
    vals = _values_at(producers, params, q, coarse, L0)
    candidates = [(pl, float(v), "sweep") for pl, v in zip(plans, vals)]

    def objective(q, phi):
        return _values_at(producers, params, q, coarse, L0)

    phis = np.array([pl.phi for pl in plans]).reshape(len(plans), -1)
    order = sorted(range(len(plans)), key=lambda k: (vals[k], tuple(phis[k])))[:n_finalists]
    finalists = []
    if net.n_edges:
        width = net.flow_max - net.flow_min
        step = 1.0 / max(resolution - 1, 1)
        for k in order:
            x, fx = _pattern_search(net, objective, phis[k], vals[k], width * step, min_step / step, DEFAULT_TOL)
            pq = np.clip(induced_production(net, x), 0.0, net.capacity)
            finalists.append(Plan(pq, x))
            candidates.append((finalists[-1], float(fx), "refined"))
    else:
        finalists = [plans[k] for k in order]
    scored = []
    for pl in dict.fromkeys(finalists):
        v = evaluate_vd(net, producers, params, pl, grid, L0)
        candidates.append((pl, v, "final"))
        scored.append((v, tuple(pl.phi), pl))
    scored.sort(key=lambda r: (r[0], r[1]))
    best_val, _, best = scored[0]
    return VdResult(best, best_val, candidates)


def calibrate_rho(
    net: NetworkSpec,
    producers,
    params: MarketParams,
    plan: Plan,
    grid: Grid,
    L0: float,
    target: float,
    bracket=(1e-8, 10.0),
) -> float:
    """Risk aversion at which the fixed-plan value of ``plan`` equals ``target``.

    The fixed-plan value increases with rho. If even the lower end of the
    bracket overshoots the target, that end is returned.
    """
    if not is_feasible(net, plan, DEFAULT_TOL):
        raise ModelInputError(f"plan is not feasible: {plan}")

    def gap(log_rho):
        return evaluate_vd(net, producers, params.replace(rho=float(np.exp(log_rho))), plan, grid, L0) - target

    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    g_lo = gap(lo)
    if g_lo >= 0:
        log.warning("target %.4g is below the value at rho=%g; returning the bracket end", target, bracket[0])
        return float(bracket[0])
    if gap(hi) <= 0:
        raise ModelInputError(f"target {target:.4g} not reached for rho <= {bracket[1]}")
    return float(np.exp(brentq(gap, lo, hi, xtol=1e-6)))


def write_candidates_csv(result: VdResult, path) -> None:
    if not result.candidates:
        return
    n = result.plan.q.size
    e = result.plan.phi.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage"] + [f"q_{i + 1}" for i in range(n)] + [f"phi_{k + 1}" for k in range(e)] + ["value", "selected"])
        for pl, v, stage in result.candidates:
            w.writerow([stage] + pl.q.tolist() + pl.phi.tolist() + [v, int(stage == "final" and pl == result.plan)])
