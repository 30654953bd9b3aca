"""Command-line entry point: ``lfstl {run,certify,check,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


from .barrier import LinearClassK
from .control import Mode, fixed_time_bound, nominal_settling_time
from .network import residual_delta_estimate
from .scenario import load_scenario
from .sim import read_csv, run_scenario, trajectory_sampler, write_csv
from .stl import evaluate

log = logging.getLogger("lfstl")


def _out_dir(args, scenario) -> Path:
    base = args.out or scenario.output.dir or Path("out") / scenario.name
    out = Path(base)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_one(path, args) -> tuple[str, str, bool]:
    scenario = load_scenario(path)
    report, traj = run_scenario(scenario, dt=args.dt, seed=args.seed)
    out = _out_dir(args, scenario) if not args.all else Path(args.out or "out") / scenario.name
    out.mkdir(parents=True, exist_ok=True)
    write_csv(traj, out / scenario.output.csv, scenario.name, report.verdicts)
    (out / scenario.output.report).write_text(report.to_json() + "\n")
    if args.svg or scenario.output.svg:
        from .plots import plot_trajectory

        plot_trajectory(traj, scenario, out)
    return scenario.name, report.summary(), report.robust_bound.get("satisfied", True)


def cmd_run(args) -> int:
    if args.all:
        root = Path(args.all)
        paths = sorted(root.glob("*.yaml")) + sorted(root.glob("*.yml")) if root.is_dir() else []
        if not paths:
            raise FileNotFoundError(f"no scenario files under {args.all}")
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(lambda p: _run_one(p, args), paths))
    else:
        if not args.scenario:
            raise ValueError("run needs --scenario or --all")
        results = [_run_one(args.scenario, args)]
    for name, summary, _ in results:
        print(f"{name}: {summary}")
    return 0


def cmd_certify(args) -> int:
    scenario = load_scenario(args.scenario)
    params = scenario.params()
    c = scenario.controller
    lam = LinearClassK(c.lambda1)
    print(f"scenario: {scenario.name}")
    print(f"mode: {params.mode.value}")
    print(f"alpha = {params.alpha:g}, beta = {params.beta:g}, gamma1 = {params.gamma1:g}, gamma2 = {params.gamma2:g}, mu = {params.mu}, k = {params.k:g}")
    print(f"nominal settling time (delta = 0): {nominal_settling_time(params):.6g} s")
    delta = args.delta if args.delta is not None else scenario.certificate.delta
    if params.mode is Mode.FULL and args.delta is None:
        delta = 0.0
    if delta in (None, "estimate"):
        report, traj = run_scenario(scenario, dt=args.dt, seed=args.seed)
        system = scenario.build()
        seed = scenario.certificate.seed if args.seed is None else args.seed
        delta = residual_delta_estimate(
            system.dynamics, system.chain, trajectory_sampler(traj, system.barrier.end), scenario.certificate.samples, seed
        )
        print(f"delta (estimated from {scenario.certificate.samples} samples of the simulated run): {delta:.6g}")
    else:
        print(f"delta (given): {float(delta):g}")
    if params.mu is None:
        print("certificate: needs the mu parameterisation")
        return 0
    cert = fixed_time_bound(params, float(delta))
    order = 2 if scenario.network.order == 2 else 1
    bound = -lam.inverse(cert.eps_max) if order == 2 else -cert.eps_max
    print(f"branch: {cert.branch}")
    for key in ("b", "c", "k1", "k2"):
        v = getattr(cert, key)
        if v is not None:
            print(f"{key} = {v:.6g}")
    print(f"T = {cert.T:.6g} s")
    print(f"epsilon_max = {cert.eps_max:.2f} ({cert.eps_max:.6f})")
    print(f"barrier lower bound = {bound:.2f}")
    gap = _min_gap(scenario)
    if cert.T > gap:
        print(f"warning: T exceeds the shortest switching interval ({gap:g} s)")
    return 0


def _min_gap(scenario) -> float:
    from .stl import switching_schedule, temporal_operators

    deadlines = [op.b for f in scenario.formulas.values() for op in temporal_operators(f)]
    return switching_schedule(deadlines, scenario.sim.t0).min_gap()


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario)
    traj, meta = read_csv(args.csv)
    embedded = meta.get("verdicts", {})
    mismatch = []
    for name, f in scenario.formulas.items():
        verdict = evaluate(f, traj, scenario.sim.t0)
        note = ""
        if name in embedded and embedded[name] != verdict:
            mismatch.append(name)
            note = f" (embedded: {embedded[name]})"
        print(f"{name}: {'satisfied' if verdict else 'violated'}{note}")
    if mismatch:
        print("verdicts disagree with the run: " + ", ".join(mismatch), file=sys.stderr)
        return 1
    return 0


def cmd_plot(args) -> int:
    from .plots import plot_trajectory

    scenario = load_scenario(args.scenario)
    traj, _ = read_csv(args.csv)
    out = _out_dir(args, scenario)
    for p in plot_trajectory(traj, scenario, out):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfstl", description="STL tasks on leader-follower networks via time-varying barrier functions")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required, help="scenario file or bundled scenario name")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dt", type=float, help="override the integration step")
        p.add_argument("--seed", type=int, help="seed for delta estimation sampling")
        p.add_argument("--svg", action="store_true", help="also write SVG plots")

    p = sub.add_parser("run", help="simulate a scenario and write CSV + report")
    common(p, scenario_required=False)
    p.add_argument("--all", metavar="DIR", help="run every scenario file in DIR in parallel")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="print the fixed-time and violation bounds")
    common(p)
    p.add_argument("--delta", type=float, help="residual bound to certify (default: scenario value or estimate)")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("check", help="re-evaluate the STL tasks on a trajectory CSV")
    common(p)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="SVG plots from a trajectory CSV")
    common(p)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # report every failure as one machine-readable line
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
