"""Scenario files: JSON describing the network, producers, market and run settings.

Errors point at the offending line of the file where possible.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .closed_form import ExplicitSpec
from .errors import ConfigError, ModelInputError, RegimeError
from .hjb import Grid, default_grid
from .network import EdgeSpec, NetworkSpec, NodeSpec, Plan
from .producers import (
    MarketParams,
    PiecewiseLinearFn,
    ProducerSpec,
    QuadraticEffort,
    SocialCost,
    TabulatedEffort,
)
from .simulator import SimConfig

BUILTIN = ("chilean", "linear_toy", "two_node_toy")


@dataclass
class Scenario:
    name: str
    net: NetworkSpec
    producers: list
    params: MarketParams
    L0: float
    n_ell: int = 600
    n_t: int | None = None
    resolution: int = 25
    vd_resolution: int = 9
    simulation: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def grid(self, n_ell: int | None = None, n_t: int | None = None, params: MarketParams | None = None) -> Grid:
        return default_grid(
            self.producers,
            params or self.params,
            self.L0,
            n_ell=n_ell or self.n_ell,
            n_t=n_t if n_t is not None else self.n_t,
        )

    def sim_config(self, **overrides) -> SimConfig:
        opts = dict(self.simulation)
        opts.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return SimConfig(**opts)
        except TypeError as exc:
            raise ConfigError(f"{self.name}: bad simulation settings: {exc}") from None

    def with_params(self, **changes) -> "Scenario":
        from dataclasses import replace

        return replace(self, params=self.params.replace(**changes))

    def explicit_spec(self, plan: Plan) -> ExplicitSpec:
        """Closed-form data for this scenario at a frozen plan.

        Requires single-slope pollution and production cost curves, quadratic
        effort costs and a linear social cost.
        """
        if self.params.social_cost.kind != "linear":
            raise RegimeError("closed form needs a linear social cost")
        rates, costs, curv, caps = [], [], [], []
        for i, prod in enumerate(self.producers):
            if prod.pollution.slopes.size != 1 or prod.cost.slopes.size != 1:
                raise RegimeError(f"producer {i + 1}: closed form needs linear pollution and cost")
            if not isinstance(prod.effort, QuadraticEffort):
                raise RegimeError(f"producer {i + 1}: closed form needs quadratic effort cost")
            rates.append(prod.pollution.slopes[0])
            costs.append(float(prod.cost(plan.q[i])))
            curv.append(prod.effort.curvature)
            caps.append(prod.effort.a_max)
        p = self.params
        return ExplicitSpec(rates, plan.q, curv, caps, p.social_cost.lam, p.sigma, p.rho, p.horizon, costs, p.ell0)


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, where: str, msg: str, key: str | None = None):
        line = _line_of(self.text, key or where.split(".")[-1].split("[")[0])
        loc = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{loc}: {where}: {msg}")

    def get(self, obj, key, where, kind=None, default=...):
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
        if key not in obj:
            if default is ...:
                self.fail(where, f"missing key {key!r}", key=where.split(".")[-1].split("[")[0])
            return default
        val = obj[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self.fail(f"{where}.{key}", f"expected a number, got {val!r}", key)
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                self.fail(f"{where}.{key}", f"expected an integer, got {val!r}", key)
            return val
        if kind is list and not isinstance(val, list):
            self.fail(f"{where}.{key}", "expected a list", key)
        if kind is dict and not isinstance(val, dict):
            self.fail(f"{where}.{key}", "expected an object", key)
        return val


def _piecewise(r: _Reader, obj, prefix, where) -> PiecewiseLinearFn:
    b = r.get(obj, f"{prefix}_breakpoints", where, list)
    s = r.get(obj, f"{prefix}_slopes", where, list)
    try:
        return PiecewiseLinearFn(b, s)
    except ModelInputError as exc:
        r.fail(f"{where}.{prefix}", str(exc), f"{prefix}_breakpoints")


def _effort(r: _Reader, obj, where):
    kind = r.get(obj, "kind", where)
    try:
        if kind == "quadratic":
            return QuadraticEffort(r.get(obj, "h", where, float), r.get(obj, "a_max", where, float))
        if kind == "tabulated":
            return TabulatedEffort(r.get(obj, "efforts", where, list), r.get(obj, "values", where, list))
    except ModelInputError as exc:
        r.fail(where, str(exc), "effort")
    r.fail(where, f"unknown effort kind {kind!r} (use 'quadratic' or 'tabulated')", "kind")


def parse_scenario(text: str, source: str = "<config>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    r = _Reader(text, source)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    try:
        nodes = [
            NodeSpec(
                r.get(n, "id", f"nodes[{k}]", int),
                r.get(n, "demand", f"nodes[{k}]", float),
                r.get(n, "capacity", f"nodes[{k}]", float),
            )
            for k, n in enumerate(r.get(data, "nodes", "nodes", list))
        ]
        edges = [
            EdgeSpec(
                r.get(e, "from", f"edges[{k}]", int),
                r.get(e, "to", f"edges[{k}]", int),
                r.get(e, "resistance", f"edges[{k}]", float),
                r.get(e, "flow_min", f"edges[{k}]", float, 0.0),
                r.get(e, "flow_max", f"edges[{k}]", float),
            )
            for k, e in enumerate(r.get(data, "edges", "edges", list, []))
        ]
        net = NetworkSpec(nodes, edges)
    except ModelInputError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail("network", str(exc), "nodes")

    prods_raw = r.get(data, "producers", "producers", list)
    if len(prods_raw) != net.n_nodes:
        r.fail("producers", f"need one producer per node ({net.n_nodes}), got {len(prods_raw)}")
    producers = []
    for k, pr in enumerate(prods_raw):
        where = f"producers[{k}]"
        producers.append(
            ProducerSpec(
                _piecewise(r, pr, "cost", where),
                _piecewise(r, pr, "pollution", where),
                _effort(r, r.get(pr, "effort", where, dict), where + ".effort"),
                float(net.capacity[k]),
            )
        )
        for prefix in ("cost", "pollution"):
            if not getattr(producers[-1], prefix).nondecreasing:
                r.fail(f"{where}.{prefix}", f"{prefix} slopes must be >= 0", f"{prefix}_slopes")

    m = r.get(data, "market", "market", dict)
    try:
        social = SocialCost(r.get(m, "social_cost", "market", default="rectified"), r.get(m, "lambda", "market", float))
        reservations = tuple(r.get(m, "reservations", "market", list, []))
        params = MarketParams(
            rho=r.get(m, "rho", "market", float),
            sigma=r.get(m, "sigma", "market", float),
            social_cost=social,
            ell0=r.get(m, "ell0", "market", float),
            horizon=r.get(m, "horizon", "market", float),
            reservations=reservations,
        )
        params.initial_certainty_equivalents(net.n_nodes)
    except ModelInputError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail("market", str(exc), "market")

    grid = r.get(data, "grid", "grid", dict, {})
    search = r.get(data, "search", "search", dict, {})
    sim = r.get(data, "simulation", "simulation", dict, {})
    known = {"n_paths", "dt", "seed", "antithetic", "record_paths", "threads"}
    extra = set(sim) - known
    if extra:
        r.fail("simulation", f"unknown keys {sorted(extra)}", sorted(extra)[0])
    n_t = grid.get("n_t")
    if n_t is not None:
        n_t = r.get(grid, "n_t", "grid", int)
    return Scenario(
        name=str(data.get("name", Path(source).stem)),
        net=net,
        producers=producers,
        params=params,
        L0=r.get(data, "initial_pollution", "initial_pollution", float),
        n_ell=r.get(grid, "n_ell", "grid", int, 600),
        n_t=n_t,
        resolution=r.get(search, "resolution", "search", int, 25),
        vd_resolution=r.get(search, "vd_resolution", "search", int, 9),
        simulation=dict(sim),
        raw=data,
    )


def load_scenario(path_or_name) -> Scenario:
    """Load a scenario from a path, or a built-in one by name."""
    name = str(path_or_name)
    if name in BUILTIN or name.removesuffix(".json") in BUILTIN and not Path(name).exists():
        ref = resources.files("pollcontract") / "scenarios" / f"{name.removesuffix('.json')}.json"
        return parse_scenario(ref.read_text(), f"{name.removesuffix('.json')}.json")
    path = Path(name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))
