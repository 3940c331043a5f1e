"""Command line: ``pollcontract <command> SCENARIO [options]``.

SCENARIO is a path to a JSON file or the name of a built-in scenario
(chilean, linear_toy, two_node_toy). Outputs are CSV files with header rows,
written to ``--out`` or to ``$POLLCONTRACT_OUT`` (default ``./pollcontract-out``).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import Scenario, load_scenario
from .constant_plan import calibrate_rho, optimize_vd, write_candidates_csv
from .errors import ModelInputError, PollContractError
from .hjb import regulator_value, solve_fixed_plan, solve_general, write_surface_csv
from .network import Plan, induced_production, is_feasible, min_cost_dispatch, total_losses
from .simulator import (
    ClosedFormPolicy,
    SurfacePolicy,
    estimate_social_cost,
    simulate_policy,
    simulate_unregulated,
    write_mean_effort_csv,
    write_paths_csv,
    write_summary_csv,
)

OUT_ENV = "POLLCONTRACT_OUT"
log = logging.getLogger("pollcontract")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "pollcontract-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(v) -> str:
    return "(" + ", ".join(f"{x:.6g}" for x in np.atleast_1d(v)) + ")"


def _parse_grid(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or key not in ("n_ell", "n_t"):
            raise ModelInputError(f"grid override {item!r}: use n_ell=<int> or n_t=<int>")
        try:
            out[key] = int(val)
        except ValueError:
            raise ModelInputError(f"grid override {item!r}: value must be an integer") from None
    return out


def _plan_from_flows(scn: Scenario, text: str | None) -> Plan:
    if text is None or text == "dispatch":
        return min_cost_dispatch(scn.net, scn.producers, resolution=scn.resolution)
    try:
        phi = np.array([float(x) for x in text.split(",")]) if text.strip() else np.zeros(0)
    except ValueError:
        raise ModelInputError(f"--fixed-plan expects 'dispatch' or comma-separated flows, got {text!r}") from None
    plan = Plan(induced_production(scn.net, phi), phi)
    if not is_feasible(scn.net, plan):
        raise ModelInputError(f"flows {text} induce an infeasible plan {plan}")
    return Plan(np.clip(plan.q, 0.0, scn.net.capacity), phi)


def cmd_dispatch(args) -> int:
    scn = load_scenario(args.scenario)
    plan = min_cost_dispatch(scn.net, scn.producers, resolution=scn.resolution)
    costs = np.array([float(p.cost(q)) for p, q in zip(scn.producers, plan.q)])
    poll = np.array([float(p.pollution(q)) for p, q in zip(scn.producers, plan.q)])
    losses = total_losses(scn.net, plan)
    print(f"scenario {scn.name}: minimum-cost dispatch")
    print(f"  production q   = {_fmt(plan.q)}")
    print(f"  flows phi      = {_fmt(plan.phi)}  edges {scn.net.edge_labels()}")
    print(f"  cost rate      = {_fmt(costs)}  total {costs.sum():.6g}")
    print(f"  pollution rate = {_fmt(poll)}  total {poll.sum():.6g}")
    print(f"  line losses    = {losses:.6g}")
    print(f"  horizon cost   = {costs.sum() * scn.params.horizon:.6g}")
    out = _out_dir(args) / f"{scn.name}_dispatch.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "demand", "capacity", "q", "cost_rate", "pollution_rate"])
        for i in range(scn.net.n_nodes):
            w.writerow([i + 1, scn.net.demand[i], scn.net.capacity[i], plan.q[i], costs[i], poll[i]])
        w.writerow([])
        w.writerow(["edge", "phi", "loss"])
        for e, lab in enumerate(scn.net.edge_labels()):
            w.writerow([lab, plan.phi[e], scn.net.resistance[e] * plan.phi[e] ** 2])
    print(f"wrote {out}")
    return 0


def _solve(scn: Scenario, args, fixed: str | None):
    grid = scn.grid(**_parse_grid(getattr(args, "grid", None)))
    t0 = time.perf_counter()
    if fixed is not None:
        plan = _plan_from_flows(scn, fixed)
        surface = solve_fixed_plan(scn.net, scn.producers, scn.params, plan, grid)
    else:
        surface = solve_general(scn.net, scn.producers, scn.params, grid, resolution=scn.resolution)
    log.info("solved on %d x %d grid in %.2f s", grid.n_ell, grid.n_t + 1, time.perf_counter() - t0)
    return surface


def cmd_solve(args) -> int:
    scn = load_scenario(args.scenario)
    surface = _solve(scn, args, args.fixed_plan)
    g = surface.grid
    v0, slope = surface.value_at(0.0, scn.L0)
    n = scn.net.n_nodes
    kind = "fixed plan" if args.fixed_plan is not None else "optimal plan"
    print(f"scenario {scn.name} ({kind}); grid n_ell={g.n_ell} n_t={g.n_t} on [{g.ell_min:.6g}, {g.ell_max:.6g}]")
    print(f"  v_hat(0, {scn.L0:g}) = {v0:.6g}   slope {slope:.6g}")
    print(f"  V0 = v_hat + sum y0 = {regulator_value(v0, scn.params, n):.6g}")
    print(f"  rho = {scn.params.rho:g} (scenario value), sigma = {scn.params.sigma:g}, R0 = {list(scn.params.reservations) or [-1.0] * n}")
    if "calibration" in scn.raw:
        print("  note: rho is calibrated from the scenario's reference constant plan (see calibrate-rho)")
    z, q, phi, _ = surface.policy_at(0.0, scn.L0)
    print(f"  policy at (0, L0): q = {_fmt(q)}, phi = {_fmt(phi)}, z = {_fmt(z)}")
    out = _out_dir(args) / f"{scn.name}_surface.csv"
    t_stride = args.t_stride or max(1, g.n_t // 200)
    write_surface_csv(surface, out, t_stride=t_stride, ell_stride=args.ell_stride)
    print(f"wrote {out}")
    return 0


def _run_simulation(scn: Scenario, policy_name: str, cfg, fixed: str | None, args=None):
    if policy_name == "unregulated":
        plan = _plan_from_flows(scn, fixed)
        return simulate_unregulated(scn.net, scn.producers, scn.params, plan, cfg, scn.L0), None
    if policy_name == "closed":
        plan = _plan_from_flows(scn, fixed)
        return simulate_policy(scn.producers, scn.params, ClosedFormPolicy(scn.explicit_spec(plan)), cfg, scn.L0), None
    surface = _solve(scn, args, fixed if policy_name == "fixed" else None)
    if not surface.grid.ell_min <= scn.L0 <= surface.grid.ell_max:
        raise ModelInputError("initial pollution lies outside the value grid")
    return simulate_policy(scn.producers, scn.params, SurfacePolicy(surface), cfg, scn.L0), surface


def cmd_simulate(args) -> int:
    scn = load_scenario(args.scenario)
    cfg = scn.sim_config(n_paths=args.paths, seed=args.seed, dt=args.dt, threads=args.threads)
    fixed = args.fixed_plan if args.policy != "fixed" else (args.fixed_plan or "dispatch")
    bundle, surface = _run_simulation(scn, args.policy, cfg, fixed, args)
    out = _out_dir(args)
    stem = f"{scn.name}_{args.policy}"
    write_paths_csv(bundle, out / f"{stem}_paths.csv")
    write_summary_csv(bundle, scn.params, out / f"{stem}_summary.csv")
    write_mean_effort_csv(bundle, out / f"{stem}_effort.csv")
    sc = estimate_social_cost(bundle)
    print(f"scenario {scn.name}, policy {args.policy}: {cfg.n_paths} paths, dt={cfg.dt:g}, seed={cfg.seed}")
    print(f"  social cost         = {sc.mean:.6g} +/- {sc.se:.3g}")
    inc = bundle.increment()
    print(f"  pollution increment = {inc.mean:.6g} +/- {inc.se:.3g}")
    print(f"  mean effort at t=0  = {_fmt(bundle.mean_effort[0])}, last step = {_fmt(bundle.mean_effort[-1])}")
    if surface is not None:
        v0 = surface.value_at(0.0, scn.L0)[0]
        print(f"  solver V0(0, L0)    = {regulator_value(v0, scn.params, scn.net.n_nodes):.6g} (v_hat {v0:.6g} plus sum y0)")
    print(f"  clamped steps       = {bundle.clamped_fraction:.3%}")
    print(f"wrote {out / stem}_{{paths,summary,effort}}.csv")
    return 0


def cmd_constant_plan(args) -> int:
    scn = load_scenario(args.scenario)
    grid = scn.grid(**_parse_grid(args.grid))
    res = optimize_vd(scn.net, scn.producers, scn.params, grid, scn.L0, resolution=args.resolution or scn.vd_resolution)
    out = _out_dir(args) / f"{scn.name}_constant_plan.csv"
    write_candidates_csv(res, out)
    print(f"scenario {scn.name}: best constant plan")
    print(f"  q   = {_fmt(res.plan.q)}")
    print(f"  phi = {_fmt(res.plan.phi)}")
    print(f"  V^d = {res.value:.6g} (without reservation term), {regulator_value(res.value, scn.params, scn.net.n_nodes):.6g} with")
    print(f"wrote {out}")
    return 0


def cmd_calibrate_rho(args) -> int:
    scn = load_scenario(args.scenario)
    cal = scn.raw.get("calibration")
    if not cal:
        raise ModelInputError(f"scenario {scn.name} has no 'calibration' block")
    try:
        plan = Plan(cal["plan"]["q"], cal["plan"]["phi"])
        target = float(cal["target_value"])
    except (KeyError, TypeError, ValueError):
        raise ModelInputError("calibration needs plan.q, plan.phi and target_value") from None
    grid = scn.grid(**_parse_grid(args.grid))
    rho = calibrate_rho(scn.net, scn.producers, scn.params, plan, grid, scn.L0, target)
    print(f"scenario {scn.name}: rho = {rho:.6g} puts the reference plan at {target:.6g}")
    return 0


_SENSITIVITY_PARAMS = {
    "sigma": lambda scn, v: scn.with_params(sigma=v),
    "rho": lambda scn, v: scn.with_params(rho=v),
    "lambda": lambda scn, v: scn.with_params(social_cost=type(scn.params.social_cost)(scn.params.social_cost.kind, v)),
}


def cmd_sensitivity(args) -> int:
    if not args.values:
        raise ModelInputError("--values needs at least one value")
    base = load_scenario(args.scenario)
    cfg = base.sim_config(n_paths=args.paths, seed=args.seed, dt=args.dt)
    out = _out_dir(args)

    def one(value):
        scn = _SENSITIVITY_PARAMS[args.param](base, value)
        surface = solve_general(scn.net, scn.producers, scn.params, scn.grid(), resolution=scn.resolution)
        bundle = simulate_policy(scn.producers, scn.params, SurfacePolicy(surface), cfg, scn.L0)
        return value, surface.value_at(0.0, scn.L0)[0], bundle

    workers = max(1, min(args.threads, len(args.values)))
    with ThreadPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(one, args.values))
    n = base.net.n_nodes
    with open(out / f"{base.name}_sensitivity_{args.param}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.param, "v_hat", "social_cost", "social_cost_se", "increment"] + [f"mean_effort_{i + 1}" for i in range(n)])
        for value, v0, b in results:
            sc = estimate_social_cost(b)
            w.writerow([value, v0, sc.mean, sc.se, b.increment().mean] + b.mean_effort.mean(axis=0).tolist())
    with open(out / f"{base.name}_sensitivity_{args.param}_effort.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.param, "t"] + [f"mean_a_{i + 1}" for i in range(n)])
        for value, _, b in results:
            for t, row in zip(b.times[:-1], b.mean_effort):
                w.writerow([value, t] + row.tolist())
    print(f"scenario {base.name}: sensitivity to {args.param}")
    for value, v0, b in results:
        print(f"  {args.param}={value:g}: v_hat={v0:.6g}, time-averaged effort {_fmt(b.mean_effort.mean(axis=0))}")
    print(f"wrote {out / base.name}_sensitivity_{args.param}*.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pollcontract", description="Optimal pollution contracts on electricity networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON path or built-in name")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./pollcontract-out)")

    sp = sub.add_parser("dispatch", help="minimum-cost plan without regulation")
    common(sp)
    sp.set_defaults(func=cmd_dispatch)

    sp = sub.add_parser("solve", help="solve the HJB equation and write the value surface")
    common(sp)
    sp.add_argument("--fixed-plan", nargs="?", const="dispatch", metavar="FLOWS",
                    help="freeze the plan: 'dispatch' (default) or comma-separated flows")
    sp.add_argument("--grid", nargs="+", metavar="KEY=VAL", help="grid overrides n_ell=<int> n_t=<int>")
    sp.add_argument("--t-stride", type=int, default=None, help="write every k-th time slice")
    sp.add_argument("--ell-stride", type=int, default=1, help="write every k-th pollution node")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="Monte Carlo paths under a policy")
    common(sp)
    sp.add_argument("--policy", choices=("optimal", "fixed", "closed", "unregulated"), default="optimal")
    sp.add_argument("--fixed-plan", metavar="FLOWS", help="plan for fixed/closed/unregulated policies")
    sp.add_argument("--paths", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--grid", nargs="+", metavar="KEY=VAL")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("constant-plan", help="best time-invariant plan")
    common(sp)
    sp.add_argument("--resolution", type=int, help="flow levels per edge in the sweep")
    sp.add_argument("--grid", nargs="+", metavar="KEY=VAL")
    sp.set_defaults(func=cmd_constant_plan)

    sp = sub.add_parser("calibrate-rho", help="risk aversion matching the scenario's reference plan value")
    common(sp)
    sp.add_argument("--grid", nargs="+", metavar="KEY=VAL")
    sp.set_defaults(func=cmd_calibrate_rho)

    sp = sub.add_parser("sensitivity", help="solve and simulate for several parameter values")
    common(sp)
    sp.add_argument("--param", choices=sorted(_SENSITIVITY_PARAMS), default="sigma")
    sp.add_argument("--values", nargs="*", type=float, default=[])
    sp.add_argument("--paths", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--threads", type=int, default=1, help="parameter values solved concurrently")
    sp.set_defaults(func=cmd_sensitivity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PollContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
