"""Command-line harness.

    crmimo solve --scenario f.json --out dir [--step x] [--eps x] [--diminishing]
    crmimo repro --example 1..5 --out dir [--seeds n]
    crmimo region --scenario f.json --grid n --out dir
    crmimo sweep-power --out dir [--seeds n] [--powers-db 0,5,10,15,20]
    crmimo sweep-distance --out dir [--seeds n] [--ratios 1,2,4,8,12]

Exit codes: 0 success/converged, 1 I/O or usage failure, 2 flagged
non-convergence or a failed reproduction check. The worker pool size is
capped by the CRMIMO_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .experiments import (
    LN2,
    fmt,
    region_weight_grid,
    run_example,
    sweep_rate_vs_distance,
    sweep_rate_vs_power,
    to_db,
    trace_header,
    trace_rows,
    write_csv,
    write_svg,
)
from .mac import DipaOptions
from .scenario import Scenario, load_scenario
from .sipa import ConstraintMode, SolveReport, region_sweep, sipa


def _complex_pairs(a: np.ndarray):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def report_document(report: SolveReport, config: dict) -> dict:
    """Full solve report plus the resolved configuration, JSON-ready."""
    return {
        "version": __version__,
        "config": config,
        "report": {
            "aux": {"q_t": report.aux.q_t.tolist(), "q_u": report.aux.q_u},
            "weighted_sum_rate_nats": report.weighted_sum_rate,
            "weighted_sum_rate_bits": report.weighted_sum_rate / LN2,
            "per_user_rates_nats": report.per_user_rates.tolist(),
            "sum_power": report.sum_power,
            "sum_power_db": to_db(report.sum_power),
            "interference": report.interference.tolist(),
            "interference_db": [to_db(x) for x in report.interference],
            "iterations": report.iterations,
            "converged": report.converged,
            "water_level": report.water_level,
            "mode": report.mode.value,
            "mac_cov": _complex_pairs(report.mac_cov),
            "bc_cov": _complex_pairs(report.bc_cov),
        },
    }


def _solver_kwargs(args) -> dict:
    kwargs = dict(step=args.step, eps=args.eps, diminishing=args.diminishing,
                  max_outer=args.max_outer, mode=ConstraintMode(args.mode))
    kwargs["dipa_options"] = DipaOptions(
        eps=args.dipa_eps,
        eps_power_rel=args.dipa_eps_power,
        grad_tol=args.dipa_grad_tol,
        step=args.dipa_step,
    )
    return kwargs


def _add_solver_flags(parser):
    parser.add_argument("--step", type=float, default=0.1,
                        help="outer subgradient step (default 0.1)")
    parser.add_argument("--eps", type=float, default=1e-3,
                        help="stopping tolerance on multiplier*violation")
    parser.add_argument("--diminishing", action="store_true",
                        help="use step/sqrt(n) instead of a constant step")
    parser.add_argument("--max-outer", type=int, default=5000)
    parser.add_argument("--mode", default="cognitive",
                        choices=[m.value for m in ConstraintMode])
    parser.add_argument("--dipa-eps", type=float, default=1e-6)
    parser.add_argument("--dipa-eps-power", type=float, default=1e-5)
    parser.add_argument("--dipa-grad-tol", type=float, default=1e-8)
    parser.add_argument("--dipa-step", type=float, default=0.1)


def cmd_solve(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    kwargs = _solver_kwargs(args)
    report = sipa(scenario, **kwargs)
    try:
        os.makedirs(args.out, exist_ok=True)
        config = {
            "command": "solve", "scenario": str(args.scenario),
            "step": args.step, "eps": args.eps,
            "diminishing": args.diminishing, "max_outer": args.max_outer,
            "mode": args.mode,
            "dipa": {
                "eps": args.dipa_eps, "eps_power_rel": args.dipa_eps_power,
                "grad_tol": args.dipa_grad_tol, "step": args.dipa_step,
            },
        }
        with open(os.path.join(args.out, "report.json"), "w",
                  encoding="utf-8") as handle:
            json.dump(report_document(report, config), handle, indent=1)
            handle.write("\n")
        n_pu = report.interference.size
        write_csv(os.path.join(args.out, "trace.csv"),
                  trace_header(n_pu), trace_rows(report))
        if args.svg:
            xs = [it.iteration for it in report.trace]
            write_svg(os.path.join(args.out, "trace.svg"), xs,
                      {"rate [nats]": [it.rate for it in report.trace]},
                      "solver trace", "outer iteration", "weighted sum rate")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"weighted sum rate: {report.weighted_sum_rate:.6f} nats "
          f"({report.weighted_sum_rate / LN2:.6f} bits), "
          f"converged={report.converged}, iterations={report.iterations}")
    return 0 if report.converged else 2


def cmd_repro(args) -> int:
    seeds = [args.seed_base + i for i in range(args.seeds)]
    try:
        result = run_example(args.example, args.out, seeds)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for line in result.lines:
        print(line)
    for path in result.files:
        print(f"wrote {path}")
    print(f"example {args.example}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else 2


def cmd_region(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    grid = region_weight_grid(scenario.n_users, args.grid, scenario.seed)
    points = region_sweep(scenario, grid, **_solver_kwargs(args))
    k = scenario.n_users
    header = ["index"] + [f"w_{i + 1}" for i in range(k)] \
        + [f"rate_{i + 1}_nats" for i in range(k)] \
        + ["weighted_sum_rate_nats", "converged", "failure"]
    rows = []
    for idx, point in enumerate(points):
        row: list = [idx] + list(point.weights)
        if point.report is None:
            row += [float("nan")] * k + [float("nan"), 0, point.error or ""]
        else:
            row += list(point.report.per_user_rates)
            row += [point.report.weighted_sum_rate,
                    point.report.converged, ""]
        rows.append(row)
    try:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "region.csv"), header, rows)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failures = sum(1 for p in points if p.report is None)
    print(f"region sweep: {len(points)} points, {failures} failures")
    return 0 if failures == 0 else 2


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def cmd_sweep_power(args) -> int:
    seeds = [args.seed_base + i for i in range(args.seeds)]
    rows = sweep_rate_vs_power(_parse_floats(args.powers_db), seeds)
    try:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "rate_vs_power.csv"),
                  ["p_u_db", "rate_no_pu_nats", "rate_single_pu_nats",
                   "rate_no_pu_bits", "rate_single_pu_bits", "n_seeds"], rows)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"swept {len(rows)} budgets over {len(seeds)} seeds")
    return 0


def cmd_sweep_distance(args) -> int:
    seeds = [args.seed_base + i for i in range(args.seeds)]
    ratios = _parse_floats(args.ratios)
    powers = _parse_floats(args.powers_db)
    data = sweep_rate_vs_distance(ratios, powers, seeds)
    header = ["l_ratio"] + [f"rate_nats_{fmt(p)}db" for p in powers] \
        + [f"no_pu_nats_{fmt(p)}db" for p in powers]
    rows = []
    for i, l_ratio in enumerate(ratios):
        rows.append([l_ratio] + [data["pu"][p][i] for p in powers]
                    + [data["no_pu"][p] for p in powers])
    try:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "rate_vs_distance.csv"), header, rows)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"swept {len(rows)} distance ratios over {len(seeds)} seeds")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crmimo",
        description="Weighted sum-rate optimization for MIMO broadcast "
                    "channels under sum-power and interference constraints.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one scenario file")
    p_solve.add_argument("--scenario", required=True)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--svg", action="store_true",
                         help="also emit a minimal SVG trace chart")
    _add_solver_flags(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_repro = sub.add_parser("repro", help="reproduce a study example (1..5)")
    p_repro.add_argument("--example", type=int, required=True,
                         choices=[1, 2, 3, 4, 5])
    p_repro.add_argument("--out", required=True)
    p_repro.add_argument("--seeds", type=int, default=50)
    p_repro.add_argument("--seed-base", type=int, default=1)
    p_repro.set_defaults(func=cmd_repro)

    p_region = sub.add_parser("region", help="sweep weights over a scenario")
    p_region.add_argument("--scenario", required=True)
    p_region.add_argument("--grid", type=int, required=True)
    p_region.add_argument("--out", required=True)
    _add_solver_flags(p_region)
    p_region.set_defaults(func=cmd_region)

    p_sp = sub.add_parser("sweep-power", help="mean rate vs sum-power budget")
    p_sp.add_argument("--out", required=True)
    p_sp.add_argument("--seeds", type=int, default=50)
    p_sp.add_argument("--seed-base", type=int, default=1)
    p_sp.add_argument("--powers-db", default="0,5,10,15,20")
    p_sp.set_defaults(func=cmd_sweep_power)

    p_sd = sub.add_parser("sweep-distance", help="mean rate vs distance ratio")
    p_sd.add_argument("--out", required=True)
    p_sd.add_argument("--seeds", type=int, default=50)
    p_sd.add_argument("--seed-base", type=int, default=1)
    p_sd.add_argument("--ratios", default="1,2,4,8,12")
    p_sd.add_argument("--powers-db", default="15,20")
    p_sd.set_defaults(func=cmd_sweep_distance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
