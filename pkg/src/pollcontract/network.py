"""Transmission network with quadratic line losses, feasibility and dispatch.

Flows are the free variables of every plan search: production is eliminated
through the nodal balance, so a flow vector inside the box maps to exactly one
candidate plan, which is feasible iff its production respects capacities.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InfeasibleError, ModelInputError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
MAX_GRID_POINTS = 2_000_000
_CHUNK = 200_000


@dataclass(frozen=True)
class NodeSpec:
    id: int
    demand: float
    capacity: float

    def __post_init__(self):
        if self.demand < 0 or self.capacity < 0:
            raise ModelInputError(f"node {self.id}: demand and capacity must be >= 0")


@dataclass(frozen=True)
class EdgeSpec:
    """Directed line ``src -> dst``; positive flow leaves ``src``."""

    src: int
    dst: int
    resistance: float
    flow_min: float
    flow_max: float

    def __post_init__(self):
        if self.src == self.dst:
            raise ModelInputError(f"edge {self.src}->{self.dst}: endpoints must differ")
        if self.resistance < 0:
            raise ModelInputError(f"edge {self.src}->{self.dst}: resistance must be >= 0")
        if not 0 <= self.flow_min <= self.flow_max:
            raise ModelInputError(f"edge {self.src}->{self.dst}: need 0 <= flow_min <= flow_max")


class NetworkSpec:
    def __init__(self, nodes: Sequence[NodeSpec], edges: Sequence[EdgeSpec] = ()):
        nodes = list(nodes)
        edges = list(edges)
        if not nodes:
            raise ModelInputError("network needs at least one node")
        if [n.id for n in nodes] != list(range(1, len(nodes) + 1)):
            raise ModelInputError("node ids must be 1..N in order")
        n = len(nodes)
        for e in edges:
            if not (1 <= e.src <= n and 1 <= e.dst <= n):
                raise ModelInputError(f"edge {e.src}->{e.dst} references a missing node")
        self.nodes = tuple(nodes)
        self.edges = tuple(edges)
        self.demand = np.array([x.demand for x in nodes], float)
        self.capacity = np.array([x.capacity for x in nodes], float)
        self.resistance = np.array([e.resistance for e in edges], float)
        self.flow_min = np.array([e.flow_min for e in edges], float)
        self.flow_max = np.array([e.flow_max for e in edges], float)
        # sign[i, e] = +1 if e enters node i, -1 if it leaves, 0 otherwise
        sign = np.zeros((n, len(edges)))
        for k, e in enumerate(edges):
            sign[e.dst - 1, k] = 1.0
            sign[e.src - 1, k] = -1.0
        self.sign = sign
        self.touches = np.abs(sign)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_labels(self) -> list[str]:
        return [f"{e.src}{e.dst}" for e in self.edges]


@dataclass(frozen=True, eq=False)
class Plan:
    """Production per node and flow per edge, held constant over a time step."""

    q: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        phi = np.array(self.phi, dtype=float).reshape(-1)
        q.flags.writeable = False
        phi.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "phi", phi)

    def __eq__(self, other):
        return (
            isinstance(other, Plan)
            and np.array_equal(self.q, other.q)
            and np.array_equal(self.phi, other.phi)
        )

    def __hash__(self):
        return hash((self.q.tobytes(), self.phi.tobytes()))

    def __repr__(self):
        fmt = lambda v: "(" + ", ".join(f"{x:.6g}" for x in v) + ")"
        return f"Plan(q={fmt(self.q)}, phi={fmt(self.phi)})"


def _check_flows(net: NetworkSpec, phi) -> np.ndarray:
    phi = np.asarray(phi, float)
    if phi.shape[-1:] != (net.n_edges,) and not (net.n_edges == 0 and phi.size == 0):
        raise ModelInputError(f"flow vector must have length {net.n_edges}, got shape {phi.shape}")
    if net.n_edges == 0:
        phi = phi.reshape(phi.shape[:-1] + (0,)) if phi.ndim else np.zeros(0)
    return phi


def _losses(net: NetworkSpec, phi: np.ndarray) -> np.ndarray:
    """Loss charged to each node: half of r_e phi_e^2 for every incident line."""
    return 0.5 * (phi * phi * net.resistance) @ net.touches.T


def induced_production(net: NetworkSpec, phi) -> np.ndarray:
    """Production that makes every nodal balance hold exactly for flows ``phi``.

    Broadcasts over leading axes of ``phi``.
    """
    phi = _check_flows(net, phi)
    return net.demand + _losses(net, phi) - phi @ net.sign.T


def balance_residual(net: NetworkSpec, plan: Plan) -> np.ndarray:
    if plan.q.shape != (net.n_nodes,):
        raise ModelInputError(f"production vector must have length {net.n_nodes}")
    phi = _check_flows(net, plan.phi)
    return plan.q + phi @ net.sign.T - _losses(net, phi) - net.demand


def total_losses(net: NetworkSpec, plan: Plan) -> float:
    return float(np.sum(net.resistance * plan.phi**2))


def is_feasible(net: NetworkSpec, plan: Plan, tol: float = DEFAULT_TOL) -> bool:
    if not tol > 0:
        raise ModelInputError("tol must be > 0")
    try:
        res = balance_residual(net, plan)
    except ModelInputError:
        return False
    return bool(
        np.max(np.abs(res), initial=0.0) <= tol
        and np.all(plan.q >= -tol)
        and np.all(plan.q <= net.capacity + tol)
        and np.all(plan.phi >= net.flow_min - tol)
        and np.all(plan.phi <= net.flow_max + tol)
    )


def flow_grid(net: NetworkSpec, resolution: int) -> np.ndarray:
    """All flow vectors of the box grid, in lexicographic order, shape (M, E)."""
    if resolution < 2:
        raise ModelInputError("resolution must be >= 2")
    if net.n_edges == 0:
        return np.zeros((1, 0))
    while resolution ** net.n_edges > MAX_GRID_POINTS and resolution > 2:
        resolution -= 1
        log.warning("flow grid too large; reducing resolution to %d", resolution)
    axes = [
        np.linspace(lo, hi, resolution) if hi > lo else np.array([lo])
        for lo, hi in zip(net.flow_min, net.flow_max)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _feasible_q(net: NetworkSpec, q: np.ndarray, tol: float) -> np.ndarray:
    return np.all(q >= -tol, axis=-1) & np.all(q <= net.capacity + tol, axis=-1)


def plan_grid(net: NetworkSpec, resolution: int, tol: float = DEFAULT_TOL) -> list[Plan]:
    """Feasible plans whose flows lie on the box grid, lexicographically sorted."""
    phi = flow_grid(net, resolution)
    q = induced_production(net, phi)
    ok = _feasible_q(net, q, tol)
    q = np.clip(q, 0.0, net.capacity)
    return [Plan(qi, fi) for qi, fi in zip(q[ok], phi[ok])]


PlanObjective = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _evaluate(net: NetworkSpec, objective: PlanObjective, phi: np.ndarray, tol: float) -> np.ndarray:
    out = np.full(phi.shape[0], np.inf)
    for start in range(0, phi.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        q = induced_production(net, phi[sl])
        ok = _feasible_q(net, q, tol)
        if np.any(ok):
            out[sl][ok] = objective(np.clip(q[ok], 0.0, net.capacity), phi[sl][ok])
    return out


def _directions(n_edges: int) -> np.ndarray:
    """Pattern directions: all of {-1, 0, 1}^E when small, else axes and pairs.

    Kinks of piecewise-linear costs create valleys along which several flows
    must move together, so the richer set matters for small networks.
    """
    if 3**n_edges - 1 <= 728:
        dirs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n_edges)))
        return dirs[np.any(dirs != 0, axis=1)]
    dirs = []
    eye = np.eye(n_edges)
    for j in range(n_edges):
        dirs += [eye[j], -eye[j]]
    for j, k in itertools.combinations(range(n_edges), 2):
        for sj, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            dirs.append(sj * eye[j] + sk * eye[k])
    return np.array(dirs)


def _pattern_search(net, objective, x, fx, width, min_rel, tol, max_iter=20_000):
    """Compass/diagonal pattern search inside the flow box, halving on failure."""
    dirs = _directions(net.n_edges) * width
    rel = 1.0
    for _ in range(max_iter):
        if rel < min_rel:
            break
        cand = np.clip(x + rel * dirs, net.flow_min, net.flow_max)
        vals = _evaluate(net, objective, cand, tol)
        j = int(np.argmin(vals))
        if vals[j] < fx - 1e-13 * max(1.0, abs(fx)):
            x, fx = cand[j], vals[j]
        else:
            rel *= 0.5
    return x, fx


def search_plans(
    net: NetworkSpec,
    objective: PlanObjective,
    resolution: int = 25,
    refine: bool = True,
    n_starts: int = 4,
    min_step: float = 1e-7,
    tol: float = DEFAULT_TOL,
) -> tuple[Plan, float]:
    """Minimize ``objective(q, phi)`` over feasible plans.

    Exhaustive evaluation on the flow grid, then pattern-search refinement
    from the ``n_starts`` best grid points. ``min_step`` is the final step as a
    fraction of each edge's box width. Ties go to the lexicographically
    smallest flow vector.
    """
    phi = flow_grid(net, resolution)
    vals = _evaluate(net, objective, phi, tol)
    if not np.any(np.isfinite(vals)):
        raise InfeasibleError("no feasible flow vector on the search grid")
    if net.n_edges == 0 or not refine:
        j = int(np.argmin(vals))
    else:
        # stable sort keeps lexicographic order among equal values
        order = np.argsort(vals, kind="stable")[: max(1, n_starts)]
        order = order[np.isfinite(vals[order])]
        width = net.flow_max - net.flow_min
        step = 1.0 / (resolution - 1)
        results = []
        for j in order:
            x, fx = _pattern_search(net, objective, phi[j], vals[j], width * step, min_step / step, tol)
            results.append((fx, tuple(x)))
        results.sort()
        best_val = results[0][0]
        best = min(r[1] for r in results if r[0] <= best_val)
        phi = np.array([best])
        vals = np.array([best_val])
        j = 0
    q = np.clip(induced_production(net, phi[j]), 0.0, net.capacity)
    return Plan(q, phi[j]), float(vals[j])


def production_cost_objective(producers) -> PlanObjective:
    def objective(q, phi):
        return sum(prod.cost(q[:, i]) for i, prod in enumerate(producers))

    return objective


def min_cost_dispatch(
    net: NetworkSpec, producers, tol: float = DEFAULT_TOL, resolution: int = 25
) -> Plan:
    """Cheapest feasible plan ignoring pollution (the no-regulation benchmark)."""
    if len(producers) != net.n_nodes:
        raise ModelInputError("need one producer per node")
    plan, _ = search_plans(net, production_cost_objective(producers), resolution=resolution, tol=tol)
    return plan
