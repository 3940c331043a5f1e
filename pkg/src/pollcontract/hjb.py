"""Explicit upwind finite differences for the regulator's HJB equation.

The equation is solved backward from ``v(T, .) = 0``::

    v(t_n) = v(t_{n+1}) + dt * [G(v_l) + sigma^2/2 v_ll + Lambda(l - l0)]

Pollution drift is never negative, so the upwind slope is the forward
difference. With ``dt <= dl^2 / (sigma^2 + dl * b_max)`` every update is a
monotone combination of neighbouring values, which is what makes the scheme
converge to the viscosity solution. At both ends the second derivative is set
to zero (linear extrapolation); the last node reuses its neighbour's slope.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelInputError, StabilityError
from .hamiltonian import PlanCatalog, default_slopes, plan_terms
from .network import DEFAULT_TOL, NetworkSpec, Plan, is_feasible
from .producers import MarketParams, efforts


@dataclass(frozen=True)
class Grid:
    ell_min: float
    ell_max: float
    n_ell: int
    n_t: int
    T: float

    def __post_init__(self):
        if not self.ell_min < self.ell_max:
            raise ModelInputError("grid needs ell_min < ell_max")
        if self.n_ell < 3:
            raise ModelInputError("grid needs n_ell >= 3")
        if self.n_t < 1 or not self.T > 0:
            raise ModelInputError("grid needs n_t >= 1 and T > 0")

    @property
    def dell(self) -> float:
        return (self.ell_max - self.ell_min) / (self.n_ell - 1)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def ell(self) -> np.ndarray:
        return np.linspace(self.ell_min, self.ell_max, self.n_ell)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    def max_stable_dt(self, sigma: float, max_drift: float) -> float:
        dl = self.dell
        return dl * dl / (sigma * sigma + dl * max_drift)

    def check_stability(self, sigma: float, max_drift: float) -> None:
        limit = self.max_stable_dt(sigma, max_drift)
        if self.dt > limit * (1 + 1e-12):
            raise StabilityError(
                f"time step {self.dt:.4g} exceeds the stability limit {limit:.4g} "
                f"(n_t must be >= {math.ceil(self.T / limit)})"
            )

    def coarsened(self, factor: int, sigma: float, max_drift: float) -> "Grid":
        n_ell = max(3, (self.n_ell - 1) // factor + 1)
        return make_grid(self.ell_min, self.ell_max, n_ell, self.T, sigma, max_drift)


def drift_bound(producers) -> float:
    """N times the largest pollution rate any producer can reach."""
    return len(producers) * max(prod.max_pollution for prod in producers)


def make_grid(ell_min, ell_max, n_ell, T, sigma, max_drift, n_t=None) -> Grid:
    """Grid with the smallest stable ``n_t`` unless one is given (then checked)."""
    probe = Grid(ell_min, ell_max, n_ell, 1, T)
    if n_t is None:
        n_t = max(1, math.ceil(T / probe.max_stable_dt(sigma, max_drift) - 1e-9))
    grid = Grid(ell_min, ell_max, n_ell, int(n_t), T)
    grid.check_stability(sigma, max_drift)
    return grid


def default_grid(producers, params: MarketParams, L0: float, n_ell: int = 600, n_t=None, ell_min=None, ell_max=None) -> Grid:
    """Domain ``[max(0, L0 - 4 s sqrt T), L0 + b_max T + 4 s sqrt T]``."""
    T = params.horizon
    b_max = drift_bound(producers)
    spread = 4.0 * params.sigma * math.sqrt(T)
    lo = max(0.0, L0 - spread) if ell_min is None else ell_min
    hi = L0 + b_max * T + spread if ell_max is None else ell_max
    if hi <= lo:
        hi = lo + 1.0
    return make_grid(lo, hi, n_ell, T, params.sigma, b_max, n_t)


def _slope(v: np.ndarray, dl: float) -> np.ndarray:
    out = np.empty_like(v)
    out[..., :-1] = (v[..., 1:] - v[..., :-1]) / dl
    out[..., -1] = out[..., -2]
    return out


def _curvature(v: np.ndarray, dl: float) -> np.ndarray:
    out = np.zeros_like(v)
    out[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]) / (dl * dl)
    return out


class ValueSurface:
    """Value function on the time-pollution grid plus the optimizer fields.

    Slice ``n`` of the policy holds the controls applied on ``[t_n, t_n+1)``,
    computed from the slope of ``v(t_n+1, .)``.
    """

    def __init__(self, grid: Grid, v, v_ell, policy_index, z, catalog: PlanCatalog):
        self.grid = grid
        self.t = grid.t
        self.ell = grid.ell
        self.v = v
        self.v_ell = v_ell
        self.policy_index = policy_index
        self.z_star = z
        self.catalog = catalog
        for arr in (v, v_ell, policy_index, z):
            arr.flags.writeable = False

    @property
    def producers(self):
        return self.catalog.producers

    @property
    def q_star(self) -> np.ndarray:
        return self.catalog.q[self.policy_index]

    @property
    def phi_star(self) -> np.ndarray:
        return self.catalog.phi[self.policy_index]

    @property
    def a_star(self) -> np.ndarray:
        return efforts(self.producers, self.q_star, self.z_star)

    def value_at(self, t: float, ell: float):
        return value_at(self, t, ell)

    def _node(self, t, ell):
        """Nearest spatial node and the time slice containing ``t``."""
        g = self.grid
        n = np.clip(np.floor(np.asarray(t, float) / g.dt + 1e-9).astype(int), 0, g.n_t)
        x = (np.asarray(ell, float) - g.ell_min) / g.dell
        outside = (x < -0.5) | (x > g.n_ell - 0.5)
        j = np.clip(np.rint(x).astype(int), 0, g.n_ell - 1)
        return n, j, outside

    def policy_at(self, t, ell):
        """Controls ``(z, q, phi, outside)`` at time ``t`` for pollution levels ``ell``.

        Points beyond the grid get the boundary node's policy and are flagged.
        """
        n, j, outside = self._node(t, ell)
        k = self.policy_index[n, j]
        return self.z_star[n, j], self.catalog.q[k], self.catalog.phi[k], outside


def value_at(surface: ValueSurface, t: float, ell: float):
    """Bilinear interpolation of ``(v, v_ell)`` at ``(t, ell)``."""
    g = surface.grid
    eps_t = 1e-12 * g.T
    eps_l = 1e-12 * (g.ell_max - g.ell_min)
    if not (-eps_t <= t <= g.T + eps_t and g.ell_min - eps_l <= ell <= g.ell_max + eps_l):
        raise ModelInputError(f"point (t={t}, ell={ell}) lies outside the grid")
    x = (min(max(t, 0.0), g.T)) / g.dt
    y = (min(max(ell, g.ell_min), g.ell_max) - g.ell_min) / g.dell
    n0 = min(int(math.floor(x)), g.n_t - 1)
    j0 = min(int(math.floor(y)), g.n_ell - 2)
    fx, fy = x - n0, y - j0

    def interp(a):
        return float(
            (1 - fx) * ((1 - fy) * a[n0, j0] + fy * a[n0, j0 + 1])
            + fx * ((1 - fy) * a[n0 + 1, j0] + fy * a[n0 + 1, j0 + 1])
        )

    return interp(surface.v), interp(surface.v_ell)


def _sweep(grid: Grid, params: MarketParams, catalog: PlanCatalog) -> ValueSurface:
    n_t, n_ell, dl, dt = grid.n_t, grid.n_ell, grid.dell, grid.dt
    n_prod = len(catalog.producers)
    V = np.empty((n_t + 1, n_ell))
    V_ell = np.empty_like(V)
    IDX = np.empty((n_t + 1, n_ell), dtype=np.int32)
    Z = np.empty((n_t + 1, n_ell, n_prod))
    pen = params.penalty(grid.ell)
    half_s2 = 0.5 * params.sigma**2
    v = np.zeros(n_ell)
    alpha = np.zeros(n_ell)
    V[n_t] = v
    V_ell[n_t] = alpha
    _, IDX[n_t], Z[n_t] = catalog.evaluate(alpha)
    for n in range(n_t - 1, -1, -1):
        g, IDX[n], Z[n] = catalog.evaluate(alpha)
        v = v + dt * (g + half_s2 * _curvature(v, dl) + pen)
        alpha = _slope(v, dl)
        V[n] = v
        V_ell[n] = alpha
    return ValueSurface(grid, V, V_ell, IDX, Z, catalog)


def _check_model(net: NetworkSpec, producers, grid: Grid, params: MarketParams):
    if len(producers) != net.n_nodes:
        raise ModelInputError("need one producer per node")
    if abs(grid.T - params.horizon) > 1e-9 * params.horizon:
        raise ModelInputError("grid horizon differs from the market horizon")
    grid.check_stability(params.sigma, drift_bound(producers))


def build_catalog(net, producers, params, resolution=25, n_slopes=48) -> PlanCatalog:
    return PlanCatalog.from_slopes(net, producers, params, default_slopes(params, n_slopes), resolution)


def solve_general(net: NetworkSpec, producers, params: MarketParams, grid: Grid, catalog: PlanCatalog | None = None, resolution: int = 25) -> ValueSurface:
    """Value function of the full problem (plans and sensitivities optimized)."""
    _check_model(net, producers, grid, params)
    if catalog is None:
        catalog = build_catalog(net, producers, params, resolution)
    return _sweep(grid, params, catalog)


def solve_fixed_plan(net: NetworkSpec, producers, params: MarketParams, plan: Plan, grid: Grid) -> ValueSurface:
    """Value function when the plan is frozen; only sensitivities are optimized."""
    _check_model(net, producers, grid, params)
    if not is_feasible(net, plan, DEFAULT_TOL):
        raise ModelInputError(f"plan is not feasible: {plan}")
    plan = Plan(np.clip(plan.q, 0.0, net.capacity), plan.phi)
    return _sweep(grid, params, PlanCatalog([plan], producers, params))


def fixed_plan_values(producers, params: MarketParams, q_batch, grid: Grid) -> np.ndarray:
    """``v(0, .)`` for many frozen productions at once, shape (K, n_ell).

    Callers are responsible for feasibility; this is the batched kernel used by
    the constant-plan search.
    """
    q_batch = np.atleast_2d(np.asarray(q_batch, float))
    grid.check_stability(params.sigma, drift_bound(producers))
    dl, dt = grid.dell, grid.dt
    pen = params.penalty(grid.ell)
    half_s2 = 0.5 * params.sigma**2
    v = np.zeros((q_batch.shape[0], grid.n_ell))
    q = q_batch[:, None, :]
    for _ in range(grid.n_t):
        g = plan_terms(producers, params, _slope(v, dl), q)[2]
        v = v + dt * (g + half_s2 * _curvature(v, dl) + pen)
    return v


def regulator_value(v_hat: float, params: MarketParams, n_producers: int) -> float:
    """Add back the participation term: ``V0 = v_hat + sum_i y_i``."""
    return float(v_hat + np.sum(params.initial_certainty_equivalents(n_producers)))


def write_surface_csv(surface: ValueSurface, path, t_stride: int = 1, ell_stride: int = 1) -> None:
    producers = surface.producers
    n = len(producers)
    n_e = surface.catalog.phi.shape[1]
    header = (
        ["t", "ell", "v", "v_ell"]
        + [f"z_star_{i + 1}" for i in range(n)]
        + [f"q_star_{i + 1}" for i in range(n)]
        + [f"phi_star_{e + 1}" for e in range(n_e)]
        + [f"a_star_{i + 1}" for i in range(n)]
    )
    rows_t = list(range(0, surface.grid.n_t + 1, t_stride))
    if rows_t[-1] != surface.grid.n_t:
        rows_t.append(surface.grid.n_t)
    cols = np.arange(0, surface.grid.n_ell, ell_stride)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n_ in rows_t:
            idx = surface.policy_index[n_, cols]
            q = surface.catalog.q[idx]
            phi = surface.catalog.phi[idx]
            z = surface.z_star[n_, cols]
            a = efforts(producers, q, z)
            block = np.column_stack(
                [np.full(cols.size, surface.t[n_]), surface.ell[cols], surface.v[n_, cols], surface.v_ell[n_, cols], z, q, phi, a]
            )
            w.writerows(block.tolist())
