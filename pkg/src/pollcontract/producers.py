"""Producer primitives: cost/pollution curves, effort costs, best responses.

Every numerical routine here accepts numpy arrays and broadcasts, because the
HJB sweep evaluates them over whole grids at once. The scalar wrappers at the
bottom of the module add the argument checks used by the public API.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ModelInputError

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
# Golden-section iterations: GOLDEN**80 ~ 2e-17 of the bracket width.
_GOLDEN_ITERS = 80
_NEG_TOL = 1e-9


class PiecewiseLinearFn:
    """Continuous piecewise-linear function with value 0 at the origin.

    ``breakpoints`` are the left ends of the segments (the first must be 0) and
    ``slopes`` the slope on each segment; the last slope extends to infinity.
    """

    def __init__(self, breakpoints: Sequence[float], slopes: Sequence[float]):
        b = np.asarray(breakpoints, dtype=float)
        s = np.asarray(slopes, dtype=float)
        if b.ndim != 1 or b.size == 0 or b.shape != s.shape:
            raise ModelInputError("breakpoints and slopes must be 1-D of equal, nonzero length")
        if b[0] != 0.0:
            raise ModelInputError("first breakpoint must be 0")
        if np.any(np.diff(b) <= 0):
            raise ModelInputError("breakpoints must be strictly increasing")
        self.breakpoints = b
        self.slopes = s
        self._widths = np.append(np.diff(b), np.inf)
        self._knot_values = np.concatenate([[0.0], np.cumsum(s[:-1] * np.diff(b))])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -_NEG_TOL * np.maximum(1.0, np.abs(x))):
            raise ModelInputError("piecewise-linear functions are defined for x >= 0 only")
        x = np.maximum(x, 0.0)
        seg = np.clip(x[..., None] - self.breakpoints, 0.0, self._widths)
        return seg @ self.slopes

    @property
    def nondecreasing(self) -> bool:
        return bool(np.all(self.slopes >= 0))

    def sup_on(self, upper: float) -> float:
        """Maximum of the function over ``[0, upper]``."""
        xs = np.append(self.breakpoints[self.breakpoints < upper], upper)
        return float(np.max(self(xs)))

    def __repr__(self):
        return f"PiecewiseLinearFn({self.breakpoints.tolist()}, {self.slopes.tolist()})"


def _golden_min(fun, lo, hi, iters=_GOLDEN_ITERS):
    """Vectorized golden-section search of ``fun`` on the brackets ``[lo, hi]``."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = fun(x1), fun(x2)
    for _ in range(iters):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        new_x = np.where(left, hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo))
        new_f = fun(new_x)
        x2, f2, x1, f1 = (
            np.where(left, x1, new_x),
            np.where(left, f1, new_f),
            np.where(left, new_x, x2),
            np.where(left, new_f, f2),
        )
    return 0.5 * (lo + hi)


class EffortCost:
    """Cost of abatement effort on ``[0, a_max]``.

    Subclasses implement ``__call__`` and may override :meth:`best_effort` and
    :meth:`inner_z` with closed forms.
    """

    kind = "abstract"
    a_max: float

    def __call__(self, a):
        raise NotImplementedError

    @property
    def max_slope(self) -> float:
        """Left derivative at ``a_max``; bounds the useful sensitivity range."""
        raise NotImplementedError

    def best_effort(self, z, p):
        """argmin over ``a`` of ``h(a) - z (1 - a) p``."""
        z, p = np.broadcast_arrays(np.asarray(z, float), np.asarray(p, float))
        obj = lambda a: self(a) + z * p * a
        a = _golden_min(obj, np.zeros(z.shape), np.full(z.shape, self.a_max))
        # golden search cannot land exactly on an endpoint
        cands = np.stack([np.zeros(z.shape), a, np.full(z.shape, self.a_max)])
        vals = np.stack([obj(c) for c in cands])
        return np.take_along_axis(cands, np.argmin(vals, axis=0)[None], axis=0)[0]

    def inner_z(self, alpha, p, risk):
        return scan_inner_z(self, alpha, p, risk)


class QuadraticEffort(EffortCost):
    """``h(a) = curvature / 2 * a**2`` with closed-form best responses."""

    kind = "quadratic"

    def __init__(self, curvature: float, a_max: float):
        if not curvature > 0:
            raise ModelInputError("quadratic effort curvature must be > 0")
        if not 0 < a_max <= 1:
            raise ModelInputError("a_max must lie in (0, 1]")
        self.curvature = float(curvature)
        self.a_max = float(a_max)

    def __call__(self, a):
        return 0.5 * self.curvature * np.asarray(a, float) ** 2

    @property
    def max_slope(self):
        return self.curvature * self.a_max

    def best_effort(self, z, p):
        return np.clip(-np.asarray(z, float) * np.asarray(p, float) / self.curvature, 0.0, self.a_max)

    def inner_z(self, alpha, p, risk):
        alpha, p = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(p, float))
        h = self.curvature
        p2 = p * p
        denom = risk * h + p2
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(denom > 0, -alpha * p2 / np.where(denom > 0, denom, 1.0), 0.0)
            z_lo = np.where(p > 0, -h * self.a_max / np.where(p > 0, p, 1.0), -np.inf)
        z = np.clip(z, z_lo, 0.0)
        a = self.best_effort(z, p)
        value = alpha * (1.0 - a) * p + self(a) + 0.5 * risk * z * z
        return z, a, value

    def __repr__(self):
        return f"QuadraticEffort(curvature={self.curvature}, a_max={self.a_max})"


class TabulatedEffort(EffortCost):
    """Effort cost sampled on a grid and linearly interpolated.

    The samples must describe an increasing convex function with h(0) = 0
    allowed to be any nonnegative value.
    """

    kind = "tabulated"

    def __init__(self, efforts: Sequence[float], values: Sequence[float]):
        a = np.asarray(efforts, float)
        v = np.asarray(values, float)
        if a.ndim != 1 or a.size < 3 or a.shape != v.shape:
            raise ModelInputError("tabulated effort needs >= 3 (effort, value) samples")
        if a[0] != 0.0 or np.any(np.diff(a) <= 0) or not 0 < a[-1] <= 1:
            raise ModelInputError("effort samples must increase from 0 to a_max <= 1")
        slopes = np.diff(v) / np.diff(a)
        if np.any(slopes <= 0) or np.any(np.diff(slopes) <= 0) or v[0] < 0:
            raise ModelInputError("tabulated effort cost must be nonnegative, increasing and strictly convex")
        self.efforts = a
        self.values = v
        self.a_max = float(a[-1])
        self._slopes = slopes

    def __call__(self, a):
        return np.interp(a, self.efforts, self.values)

    @property
    def max_slope(self):
        return float(self._slopes[-1])

    def best_effort(self, z, p):
        """Knot after the last segment whose slope is covered by ``-z p``.

        At a kink the agent is indifferent; the tie goes to the higher effort.
        """
        thr = -np.asarray(z, float) * np.asarray(p, float)
        # relative slack so that z = -s_k / p recomputed in floating point still ties
        k = np.sum(self._slopes <= thr[..., None] * (1.0 + 1e-9), axis=-1)
        return self.efforts[k]

    def inner_z(self, alpha, p, risk):
        """Exact minimization over ``z``.

        Each knot ``a_k`` is implemented by an interval of sensitivities and
        the penalty ``risk z^2 / 2`` is smallest at the interval end nearest
        zero, ``z = -s_k / p`` with ``s_k`` the slope just below ``a_k``.
        """
        alpha, p = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(p, float))
        safe_p = np.where(p > 0, p, 1.0)[..., None]
        s = np.concatenate([[0.0], self._slopes])
        z = np.where(p[..., None] > 0, -s / safe_p, 0.0)
        a = self.efforts
        vals = alpha[..., None] * (1.0 - a) * p[..., None] + self.values + 0.5 * risk * z * z
        vals = np.where((p[..., None] > 0) | (np.arange(a.size) == 0), vals, np.inf)
        k = np.argmin(vals, axis=-1)
        pick = lambda arr: np.take_along_axis(arr, k[..., None], axis=-1)[..., 0]
        return pick(z), a[k], pick(vals)

    def __repr__(self):
        return f"TabulatedEffort(n={self.efforts.size}, a_max={self.a_max})"


def scan_inner_z(effort: EffortCost, alpha, p, risk, n_scan: int = 201):
    """Minimize ``alpha (1-a*) p + h(a*) + risk z^2 / 2`` over ``z`` numerically.

    Any minimizer lies in ``[-h'(a_max)/p, 0]``: below that range the effort is
    saturated and only the quadratic term grows; above zero the effort is zero.
    A uniform scan locates the basin and golden-section search polishes it.
    """
    alpha, p = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(p, float))
    shape = alpha.shape
    safe_p = np.where(p > 0, p, 1.0)
    z_lo = np.where(p > 0, -effort.max_slope / safe_p, 0.0)

    def objective(z, alpha=alpha, p=p):
        a = effort.best_effort(z, p)
        return alpha * (1.0 - a) * p + effort(a) + 0.5 * risk * z * z

    frac = np.linspace(0.0, 1.0, n_scan)
    grid = z_lo[..., None] * (1.0 - frac)
    vals = objective(grid, alpha[..., None], p[..., None])
    k = np.argmin(vals, axis=-1)
    step = -z_lo / (n_scan - 1)
    zk = np.take_along_axis(grid, k[..., None], axis=-1)[..., 0]
    lo = np.maximum(zk - step, z_lo)
    hi = np.minimum(zk + step, 0.0)
    z = _golden_min(objective, lo, hi)
    cands = np.stack([zk, z, np.zeros(shape)])
    vals = np.stack([objective(c) for c in cands])
    z = np.take_along_axis(cands, np.argmin(vals, axis=0)[None], axis=0)[0]
    a = effort.best_effort(z, p)
    return z, a, alpha * (1.0 - a) * p + effort(a) + 0.5 * risk * z * z


@dataclass(frozen=True)
class ProducerSpec:
    cost: PiecewiseLinearFn
    pollution: PiecewiseLinearFn
    effort: EffortCost
    capacity: float

    def __post_init__(self):
        if self.capacity < 0:
            raise ModelInputError("capacity must be >= 0")

    def check_production(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        tol = 1e-9 * max(1.0, self.capacity)
        if np.any(q < -tol) or np.any(q > self.capacity + tol):
            raise ModelInputError(f"production {q} outside [0, {self.capacity}]")
        return np.clip(q, 0.0, self.capacity)

    @property
    def max_pollution(self) -> float:
        return self.pollution.sup_on(self.capacity)

    @property
    def max_cost(self) -> float:
        return self.cost.sup_on(self.capacity)


class SocialCost:
    """Pollution penalty ``Lambda`` applied to the excess ``x = ell - ell0``.

    ``linear``: lam * x.  ``rectified``: lam * max(x, 0), whose derivative at
    0 is taken as 0.
    """

    KINDS = ("linear", "rectified")

    def __init__(self, kind: str, lam: float):
        if kind not in self.KINDS:
            raise ModelInputError(f"social cost kind must be one of {self.KINDS}, got {kind!r}")
        self.kind = kind
        self.lam = float(lam)

    def __call__(self, x):
        x = np.asarray(x, float)
        if self.kind == "linear":
            return self.lam * x
        return self.lam * np.maximum(x, 0.0)

    def slope(self, x):
        x = np.asarray(x, float)
        if self.kind == "linear":
            return np.full(x.shape, self.lam)
        return np.where(x > 0, self.lam, 0.0)

    @property
    def slope_bound(self) -> float:
        return abs(self.lam)

    def __repr__(self):
        return f"SocialCost({self.kind!r}, lam={self.lam})"


@dataclass(frozen=True)
class MarketParams:
    rho: float
    sigma: float
    social_cost: SocialCost
    ell0: float
    horizon: float
    reservations: tuple = field(default=())

    def __post_init__(self):
        if not self.rho > 0:
            raise ModelInputError("rho must be > 0")
        # sigma = 0 is accepted for deterministic checks of the simulator
        if not self.sigma >= 0:
            raise ModelInputError("sigma must be >= 0")
        if not self.horizon > 0:
            raise ModelInputError("horizon must be > 0")
        res = tuple(float(r) for r in self.reservations)
        if any(r >= 0 for r in res):
            raise ModelInputError("reservation utilities must be < 0 (CARA utilities are negative)")
        object.__setattr__(self, "reservations", res)

    @property
    def risk(self) -> float:
        """rho * sigma**2, the coefficient of the risk premium."""
        return self.rho * self.sigma**2

    def penalty(self, ell):
        return self.social_cost(np.asarray(ell, float) - self.ell0)

    def initial_certainty_equivalents(self, n: int) -> np.ndarray:
        res = self.reservations or (-1.0,) * n
        if len(res) != n:
            raise ModelInputError(f"expected {n} reservation utilities, got {len(res)}")
        return np.array([certainty_equivalent(self.rho, r) for r in res])

    def replace(self, **changes) -> "MarketParams":
        from dataclasses import replace

        return replace(self, **changes)


def eval_piecewise(f: PiecewiseLinearFn, x: float) -> float:
    if x < 0:
        raise ModelInputError("x must be >= 0")
    return float(f(x))


def best_effort(prod: ProducerSpec, q_i: float, z_i: float) -> float:
    q_i = prod.check_production(q_i)
    return float(prod.effort.best_effort(z_i, prod.pollution(q_i)))


def efforts(producers: Sequence[ProducerSpec], q, z) -> np.ndarray:
    """Best responses for all producers; ``q`` and ``z`` have a trailing axis N."""
    q = np.asarray(q, float)
    z = np.asarray(z, float)
    out = np.empty(np.broadcast_shapes(q.shape, z.shape))
    for i, prod in enumerate(producers):
        out[..., i] = prod.effort.best_effort(z[..., i], prod.pollution(q[..., i]))
    return out


def generator_f(producers: Sequence[ProducerSpec], params: MarketParams, q, z) -> np.ndarray:
    """Drift of the certainty-equivalent processes at production ``q``, sensitivity ``z``."""
    q = np.asarray(q, float)
    z = np.asarray(z, float)
    n = len(producers)
    if q.shape[-1:] != (n,) or z.shape[-1:] != (n,):
        raise ModelInputError(f"q and z must have trailing length {n}")
    for i, prod in enumerate(producers):
        prod.check_production(q[..., i])
    a = efforts(producers, q, z)
    p = np.stack([prod.pollution(q[..., i]) for i, prod in enumerate(producers)], axis=-1)
    h = np.stack([prod.effort(a[..., i]) for i, prod in enumerate(producers)], axis=-1)
    c = np.stack([prod.cost(q[..., i]) for i, prod in enumerate(producers)], axis=-1)
    drift = np.sum((1.0 - a) * p, axis=-1, keepdims=True)
    return h + c - z * drift + 0.5 * params.risk * z * z


def cara_utility(rho: float, x):
    if not rho > 0:
        raise ModelInputError("rho must be > 0")
    return -np.exp(-rho * np.asarray(x, float))


def certainty_equivalent(rho: float, u):
    if not rho > 0:
        raise ModelInputError("rho must be > 0")
    u = np.asarray(u, float)
    if np.any(u >= 0):
        raise ModelInputError("CARA utilities are negative; certainty equivalent needs u < 0")
    out = -np.log(-u) / rho
    return float(out) if out.ndim == 0 else out
