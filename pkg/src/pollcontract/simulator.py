"""Monte Carlo simulation of pollution, certainty equivalents and payments.

Paths are advanced by Euler-Maruyama under the equilibrium measure::

    dL   = sum_i (1 - a_i) p_i(q_i) dt + sigma dW
    dY_i = f_i(q, z) dt + z_i dL

where ``f_i`` is the generator at the recommended efforts, and the payment to
producer i is ``xi_i = Y_i(T)``. Under equilibrium the second line reduces to
``(h_i + c_i + rho sigma^2 z_i^2 / 2) dt + z_i sigma dW``. Every path draws its
normals from its own stream, seeded from ``(seed, path index)``, so results do
not depend on how paths are split across workers. With antithetic sampling
paths ``2k`` and ``2k+1`` share a stream with opposite signs.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .closed_form import ExplicitSpec, closed_policy
from .errors import ModelInputError, ValidationError
from .hjb import ValueSurface
from .network import DEFAULT_TOL, NetworkSpec, Plan, is_feasible
from .producers import MarketParams, cara_utility

log = logging.getLogger(__name__)

RNG_NOTE = f"numpy {np.__version__} PCG64 via SeedSequence(seed, spawn_key=(stream,))"
MAX_CLAMPED_FRACTION = 1e-3
CHUNK = 4096


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 2000
    dt: float = 1.0
    seed: int = 0
    antithetic: bool = True
    record_paths: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ModelInputError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ModelInputError("dt must be > 0")
        if self.antithetic and self.n_paths % 2:
            raise ModelInputError("antithetic sampling needs an even n_paths")
        if self.record_paths < 0 or self.threads < 1:
            raise ModelInputError("record_paths must be >= 0 and threads >= 1")

    def n_steps(self, T: float) -> int:
        k = round(T / self.dt)
        if k < 1 or abs(k * self.dt - T) > 1e-9 * T:
            raise ModelInputError(f"dt={self.dt} does not divide the horizon T={T}")
        return int(k)


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    se: float
    n_paths: int

    def __str__(self):
        return f"{self.mean:.6g} +/- {self.se:.3g} (n={self.n_paths})"


def _estimate(samples: np.ndarray, antithetic: bool) -> CostEstimate:
    """Mean and standard error; antithetic pairs are averaged first."""
    samples = np.asarray(samples, float)
    n = samples.size
    if antithetic and n >= 2:
        samples = 0.5 * (samples[0::2] + samples[1::2])
    m = samples.size
    se = float(np.std(samples, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return CostEstimate(float(np.mean(samples)), se, n)


# --- policies -------------------------------------------------------------
# A policy maps (t, L[P]) to (z[P, N], q[P, N], outside[P]).


class SurfacePolicy:
    """Controls read from a solved value surface at the nearest grid node."""

    def __init__(self, surface: ValueSurface):
        self.surface = surface

    def __call__(self, t, L):
        z, q, _, outside = self.surface.policy_at(t, L)
        return z, q, outside


class ClosedFormPolicy:
    """Explicit controls of the linear-quadratic regime; independent of L."""

    def __init__(self, spec: ExplicitSpec):
        closed_policy(spec, 0.0)  # regime check
        self.spec = spec
        self._z = spec.z

    def __call__(self, t, L):
        n = np.shape(L)[0]
        Z = -self._z * (self.spec.T - min(t, self.spec.T))
        q = np.broadcast_to(self.spec.productions, (n, Z.size))
        return np.broadcast_to(Z, (n, Z.size)), q, np.zeros(n, bool)


class FixedPlanPolicy:
    """Frozen production with constant sensitivities (zero by default)."""

    def __init__(self, plan: Plan, z: Sequence[float] | None = None):
        self.q = np.asarray(plan.q, float)
        self.z = np.zeros_like(self.q) if z is None else np.asarray(z, float)

    def __call__(self, t, L):
        n = np.shape(L)[0]
        return (
            np.broadcast_to(self.z, (n, self.z.size)),
            np.broadcast_to(self.q, (n, self.q.size)),
            np.zeros(n, bool),
        )


# Effort override: (t, equilibrium efforts[P]) -> efforts[P] for one producer.
EffortOverride = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class PathBundle:
    times: np.ndarray
    L: np.ndarray  # (P, K+1)
    Y: np.ndarray  # (R, K+1, N), the first R paths
    a: np.ndarray  # (R, K, N)
    xi: np.ndarray  # (P, N)
    y0: np.ndarray  # (N,)
    production_cost: np.ndarray  # (P, N) integral of c_i(q_i)
    effort_cost: np.ndarray  # (P, N) integral of h_i(a_i)
    penalty: np.ndarray  # (P,) integral of Lambda(L - ell0)
    int_f: np.ndarray  # (P, N) integral of the generator
    int_zdL: np.ndarray  # (P, N) integral of z dL
    mean_effort: np.ndarray  # (K, N)
    regulated: bool
    antithetic: bool
    clamped_steps: int = 0
    rng_note: str = RNG_NOTE
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.L.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def clamped_fraction(self) -> float:
        return self.clamped_steps / (self.n_paths * self.n_steps)

    def increment(self) -> CostEstimate:
        return _estimate(self.L[:, -1] - self.L[:, 0], self.antithetic)

    def reconstruction_error(self) -> float:
        """Max relative gap between ``Y_T`` and ``y0 + int f dt + int z dL``."""
        direct = self.y0 + self.int_f + self.int_zdL
        scale = np.maximum(np.abs(self.xi), np.abs(self.y0) + np.abs(self.int_f) + np.abs(self.int_zdL))
        scale = np.where(scale > 0, scale, 1.0)
        return float(np.max(np.abs(self.xi - direct) / scale))

    def validate(self) -> None:
        if self.clamped_fraction > MAX_CLAMPED_FRACTION:
            raise ValidationError(
                f"{self.clamped_fraction:.2%} of steps left the value grid "
                f"(limit {MAX_CLAMPED_FRACTION:.1%}); enlarge the grid"
            )


def _normals(cfg: SimConfig, first: int, last: int, n_steps: int) -> np.ndarray:
    out = np.empty((last - first, n_steps))
    for k, path in enumerate(range(first, last)):
        stream = path // 2 if cfg.antithetic else path
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(stream,))))
        x = rng.standard_normal(n_steps)
        out[k] = -x if cfg.antithetic and path % 2 else x
    return out


def _run_chunk(producers, params, policy, cfg, L0, y0, n_steps, first, last, record, override):
    P, N = last - first, len(producers)
    dt, sig = cfg.dt, params.sigma
    half_risk = 0.5 * params.risk
    dW = _normals(cfg, first, last, n_steps) * math.sqrt(dt)
    L = np.empty((P, n_steps + 1))
    L[:, 0] = L0
    R = max(0, min(record, last) - first)
    Yrec = np.empty((R, n_steps + 1, N))
    arec = np.empty((R, n_steps, N))
    Y = np.tile(y0, (P, 1))
    Yrec[:, 0] = y0
    c_int = np.zeros((P, N))
    h_int = np.zeros((P, N))
    f_int = np.zeros((P, N))
    zdl_int = np.zeros((P, N))
    a_sum = np.zeros((n_steps, N))
    clamped = 0
    for k in range(n_steps):
        t = k * dt
        z, q, outside = policy(t, L[:, k])
        clamped += int(np.count_nonzero(outside))
        p = np.empty((P, N))
        a = np.empty((P, N))
        h = np.empty((P, N))
        c = np.empty((P, N))
        for i, prod in enumerate(producers):
            p[:, i] = prod.pollution(q[:, i])
            a[:, i] = prod.effort.best_effort(z[:, i], p[:, i])
        a_eq = a
        if override is not None:
            j, fn = override
            a = a.copy()
            a[:, j] = fn(t, a[:, j])
        for i, prod in enumerate(producers):
            h[:, i] = prod.effort(a_eq[:, i])
            c[:, i] = prod.cost(q[:, i])
        # the contract is written on the recommended efforts; the observed
        # pollution increment carries any deviation into the payment
        drift_eq = np.sum((1.0 - a_eq) * p, axis=1)
        drift = np.sum((1.0 - a) * p, axis=1)
        dL = drift * dt + sig * dW[:, k]
        L[:, k + 1] = L[:, k] + dL
        running = h + c + half_risk * z * z
        Y = Y + running * dt + z * (dL - drift_eq * dt)[:, None]
        f_int += (running - z * drift_eq[:, None]) * dt
        zdl_int += z * dL[:, None]
        if override is not None:
            h[:, j] = producers[j].effort(a[:, j])
        c_int += c * dt
        h_int += h * dt
        a_sum[k] = a.sum(axis=0)
        if R:
            Yrec[:, k + 1] = Y[:R]
            arec[:, k] = a[:R]
    pen = params.penalty(L)
    pen_int = dt * (0.5 * (pen[:, 0] + pen[:, -1]) + pen[:, 1:-1].sum(axis=1))
    return dict(L=L, Y=Yrec, a=arec, xi=Y, c=c_int, h=h_int, f=f_int, zdl=zdl_int, pen=pen_int, a_sum=a_sum, clamped=clamped)


def _simulate(producers, params: MarketParams, policy, cfg: SimConfig, L0: float, regulated: bool, override=None) -> PathBundle:
    n_steps = cfg.n_steps(params.horizon)
    N = len(producers)
    y0 = params.initial_certainty_equivalents(N) if regulated else np.zeros(N)
    # fixed chunk layout (even sizes keep antithetic pairs together), so the
    # reduction order and hence every output bit is independent of threads
    spans = [(a, min(a + CHUNK, cfg.n_paths)) for a in range(0, cfg.n_paths, CHUNK)]
    args = (producers, params, policy, cfg, L0, y0, n_steps)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(lambda s: _run_chunk(*args, s[0], s[1], cfg.record_paths, override), spans))
    else:
        parts = [_run_chunk(*args, a, b, cfg.record_paths, override) for a, b in spans]
    cat = lambda key: np.concatenate([p[key] for p in parts])
    bundle = PathBundle(
        times=np.linspace(0.0, params.horizon, n_steps + 1),
        L=cat("L"),
        Y=cat("Y"),
        a=cat("a"),
        xi=cat("xi"),
        y0=y0,
        production_cost=cat("c"),
        effort_cost=cat("h"),
        penalty=cat("pen"),
        int_f=cat("f"),
        int_zdL=cat("zdl"),
        mean_effort=sum(p["a_sum"] for p in parts) / cfg.n_paths,
        regulated=regulated,
        antithetic=cfg.antithetic,
        clamped_steps=sum(p["clamped"] for p in parts),
    )
    if not regulated:
        for arr in (bundle.xi, bundle.Y, bundle.int_f, bundle.int_zdL):
            arr[...] = 0.0
    if bundle.clamped_steps:
        log.warning("%d of %d steps were clamped to the grid boundary", bundle.clamped_steps, cfg.n_paths * n_steps)
    return bundle


def simulate_policy(producers, params: MarketParams, policy, cfg: SimConfig, L0: float, validate: bool = True) -> PathBundle:
    """Simulate the regulated system under an arbitrary contract policy."""
    bundle = _simulate(producers, params, policy, cfg, L0, regulated=True)
    if validate:
        bundle.validate()
    return bundle


def simulate_regulated(surface: ValueSurface, net: NetworkSpec, producers, params: MarketParams, cfg: SimConfig, L0: float) -> PathBundle:
    g = surface.grid
    if not g.ell_min <= L0 <= g.ell_max:
        raise ModelInputError(f"L0={L0} lies outside the value grid [{g.ell_min}, {g.ell_max}]")
    if len(producers) != net.n_nodes:
        raise ModelInputError("need one producer per node")
    return simulate_policy(producers, params, SurfacePolicy(surface), cfg, L0)


def simulate_unregulated(net: NetworkSpec, producers, params: MarketParams, plan: Plan, cfg: SimConfig, L0: float) -> PathBundle:
    """Frozen plan, no contract and therefore no effort."""
    if not is_feasible(net, plan, DEFAULT_TOL):
        raise ModelInputError(f"plan is not feasible: {plan}")
    plan = Plan(np.clip(plan.q, 0.0, net.capacity), plan.phi)
    return _simulate(producers, params, FixedPlanPolicy(plan), cfg, L0, regulated=False)


def social_cost_samples(bundle: PathBundle) -> np.ndarray:
    out = bundle.production_cost.sum(axis=1) + bundle.penalty
    if bundle.regulated:
        out = out + bundle.xi.sum(axis=1)
    return out


def estimate_social_cost(bundle: PathBundle, params: MarketParams | None = None) -> CostEstimate:
    """Production cost plus pollution penalty, plus payments when regulated."""
    if bundle.n_paths == 0:
        raise ModelInputError("empty bundle")
    return _estimate(social_cost_samples(bundle), bundle.antithetic)


def estimate_production_cost(bundle: PathBundle) -> CostEstimate:
    return _estimate(bundle.production_cost.sum(axis=1), bundle.antithetic)


def _agent_utility(bundle: PathBundle, rho: float, i: int) -> np.ndarray:
    net_pay = bundle.xi[:, i] - bundle.effort_cost[:, i] - bundle.production_cost[:, i]
    return cara_utility(rho, net_pay)


def verify_agent_value(bundle: PathBundle, producers, params: MarketParams, i: int) -> CostEstimate:
    """MC estimate of ``U_A(xi_i - int (h_i + c_i))``; should equal ``U_A(y0_i)``."""
    if not bundle.regulated:
        raise ModelInputError("agent values need a regulated bundle")
    if not 0 <= i < len(producers):
        raise ModelInputError(f"producer index {i} out of range")
    return _estimate(_agent_utility(bundle, params.rho, i), bundle.antithetic)


def _offset_override(producers, i: int, delta: float) -> EffortOverride:
    a_max = producers[i].effort.a_max
    if abs(delta) > a_max:
        raise ModelInputError(f"effort offset {delta} exceeds the effort range [0, {a_max}]")
    return lambda t, a: np.clip(a + delta, 0.0, a_max)


def deviation_test(
    producers,
    params: MarketParams,
    policy,
    cfg: SimConfig,
    L0: float,
    i: int,
    perturbation: float | EffortOverride,
):
    """Paired utility change when producer ``i`` deviates from equilibrium.

    Both arms share random numbers. ``perturbation`` is either an effort offset
    (clipped into the effort range) or a function ``(t, a_eq) -> a``. The
    contract keeps following the observed pollution path, so the deviation
    moves the payment through the sensitivity. Returns ``(difference, eq, dev)``
    where ``difference`` estimates ``U_dev - U_eq``.
    """
    if not 0 <= i < len(producers):
        raise ModelInputError(f"producer index {i} out of range")
    if callable(perturbation):
        fn = perturbation
        a_max = producers[i].effort.a_max

        def checked(t, a):
            out = np.asarray(fn(t, a), float)
            if np.any(out < -1e-12) or np.any(out > a_max + 1e-12):
                raise ModelInputError("deviated effort leaves the effort range")
            return out

        override = (i, checked)
    else:
        override = (i, _offset_override(producers, i, float(perturbation)))
    eq = _simulate(producers, params, policy, cfg, L0, regulated=True)
    dev = _simulate(producers, params, policy, cfg, L0, regulated=True, override=override)
    u_eq = _agent_utility(eq, params.rho, i)
    u_dev = _agent_utility(dev, params.rho, i)
    return (
        _estimate(u_dev - u_eq, cfg.antithetic),
        _estimate(u_eq, cfg.antithetic),
        _estimate(u_dev, cfg.antithetic),
    )


def write_paths_csv(bundle: PathBundle, path) -> None:
    """Recorded paths: ``path_id, t, L, Y_1..N, a_1..N`` (effort on [t, t+dt))."""
    R, K1, N = bundle.Y.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "L"] + [f"Y_{i + 1}" for i in range(N)] + [f"a_{i + 1}" for i in range(N)])
        for r in range(R):
            a = np.vstack([bundle.a[r], bundle.a[r, -1:]]) if K1 > 1 else np.zeros((1, N))
            block = np.column_stack([np.full(K1, r), bundle.times, bundle.L[r], bundle.Y[r], a])
            w.writerows([[int(row[0])] + row[1:].tolist() for row in block])


def summary_rows(bundle: PathBundle, params: MarketParams) -> list[tuple[str, CostEstimate]]:
    rows = [
        ("social_cost", estimate_social_cost(bundle)),
        ("production_cost", estimate_production_cost(bundle)),
        ("pollution_penalty", _estimate(bundle.penalty, bundle.antithetic)),
        ("pollution_increment", bundle.increment()),
    ]
    N = bundle.xi.shape[1]
    for i in range(N):
        rows.append((f"payment_{i + 1}", _estimate(bundle.xi[:, i], bundle.antithetic)))
        rows.append((f"effort_cost_{i + 1}", _estimate(bundle.effort_cost[:, i], bundle.antithetic)))
    return rows


def write_summary_csv(bundle: PathBundle, params: MarketParams, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "mean", "se", "n_paths"])
        for name, est in summary_rows(bundle, params):
            w.writerow([name, est.mean, est.se, est.n_paths])
        w.writerow(["clamped_fraction", bundle.clamped_fraction, 0.0, bundle.n_paths])


def write_mean_effort_csv(bundle: PathBundle, path) -> None:
    N = bundle.mean_effort.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"mean_a_{i + 1}" for i in range(N)])
        for t, row in zip(bundle.times[:-1], bundle.mean_effort):
            w.writerow([t] + row.tolist())
