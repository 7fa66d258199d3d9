"""Desk-scale experiment harness: presets, sweeps, CSV/SVG persistence.

Every run is reproducible: seeds are explicit, Monte-Carlo points are
distributed over a worker pool but aggregated in submission order, and all
decimal output is formatted with 17 significant digits so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .mac import DipaOptions, dipa, waterfill_single_user
from .scenario import Scenario, db_to_linear, generate_scenario
from .sipa import ConstraintMode, SolveReport, sipa

LN2 = math.log(2.0)


def fmt(value) -> str:
    """17-significant-digit decimal rendering used in every CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def to_db(linear: float) -> float:
    """10*log10(x); nonpositive powers map to -inf."""
    return 10.0 * math.log10(linear) if linear > 0 else float("-inf")


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with a header row; all cells preformatted via fmt()."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else fmt(cell)
                             for cell in row])


def write_svg(path, xs, series: dict, title: str, xlabel: str, ylabel: str) -> None:
    """Minimal dependency-free line chart for quick trace inspection."""
    width, height, pad = 640, 400, 50
    xs = [float(x) for x in xs]
    all_y = [float(y) for ys in series.values() for y in ys
             if math.isfinite(float(y))]
    if not xs or not all_y:
        xs, all_y = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(all_y), max(all_y)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x):
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / y_span * (height - 2 * pad)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height / 2:.0f}" font-size="12" '
        f'transform="rotate(-90 16 {height / 2:.0f})" '
        f'text-anchor="middle">{ylabel}</text>',
    ]
    for idx, (label, ys) in enumerate(series.items()):
        pts = " ".join(
            f"{sx(x):.2f},{sy(float(y)):.2f}"
            for x, y in zip(xs, ys) if math.isfinite(float(y))
        )
        color = palette[idx % len(palette)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 14 + 14 * idx}" '
                     f'text-anchor="end" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(parts) + "\n")


def worker_count(n_tasks: int) -> int:
    """Pool size: CRMIMO_THREADS if set, else the CPU count, capped by tasks."""
    env = os.environ.get("CRMIMO_THREADS", "")
    try:
        cap = int(env) if env else (os.cpu_count() or 1)
    except ValueError:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def parallel_map(fn, items: list) -> list:
    """Order-preserving map over a process pool (serial when pool size 1)."""
    workers = worker_count(len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# trace serialization (one row per outer iteration)


def trace_header(n_pu: int) -> list[str]:
    header = ["iteration", "objective_nats", "objective_bits", "sum_power_db"]
    header += [f"interference_db_{j + 1}" for j in range(n_pu)]
    header += [f"q_t_{j + 1}" for j in range(n_pu)]
    header += ["q_u", "lambda"]
    return header


def trace_rows(report: SolveReport) -> list[list]:
    rows = []
    for it in report.trace:
        row = [it.iteration, it.rate, it.rate / LN2, to_db(it.sum_power)]
        row += [to_db(x) for x in it.interference]
        row += list(it.q_t)
        row += [it.q_u, it.water_level]
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# solver presets

#: accurate preset: spec-default tolerances
ACCURATE = DipaOptions()

#: Monte-Carlo preset: loosened inner tolerances for sweep points
FAST = DipaOptions(eps=1e-5, eps_power_rel=1e-4, grad_tol=1e-7)

MC_SOLVE = dict(step=0.5, eps=2e-3, diminishing=True, max_outer=120,
                dipa_options=FAST)


def example3_scenario(seed: int) -> Scenario:
    """Five users, 5x3 antennas, 13 dB sum power, two protected receivers at
    0 dB thresholds, weights (5,1,1,1,1)."""
    return generate_scenario(
        5, 5, 3, 2, 1.0, db_to_linear(13.0), 1.0, seed,
        weights=(5.0, 1.0, 1.0, 1.0, 1.0),
    )


@dataclass
class ReproResult:
    """Outcome of one reproduction command."""

    example: int
    passed: bool
    lines: list[str] = field(default_factory=list)
    files: list[str] = field(default_factory=list)


# --- example 1: single user against water-filling ---------------------------


def _ex1_case(seed: int):
    sc = generate_scenario(1, 4, 4, 0, (), db_to_linear(10.0), (), seed)
    res = dipa(sc, np.zeros(0), 1.0,
               options=DipaOptions(eps_power_rel=1e-6, grad_tol=1e-10))
    _, wf_rate = waterfill_single_user(sc.channels[0], sc.p_u, sc.sigma2)
    return res, wf_rate


def repro_example_1(out_dir, seeds: list[int]) -> ReproResult:
    rows = []
    first_trace = None
    worst = 0.0
    for seed in seeds:
        res, wf_rate = _ex1_case(seed)
        gap = abs(res.objective - wf_rate)
        worst = max(worst, gap)
        rows.append([seed, res.objective, wf_rate, gap])
        if first_trace is None:
            first_trace = [
                [i + 1, obj, wf_rate, power, lam]
                for i, (obj, power, lam) in enumerate(res.trace)
            ]
    files = []
    path = os.path.join(out_dir, "fig4_summary.csv")
    write_csv(path, ["seed", "rate_nats", "waterfill_nats", "abs_gap_nats"], rows)
    files.append(path)
    path = os.path.join(out_dir, "fig4_convergence.csv")
    write_csv(path, ["iteration", "objective_nats", "waterfill_nats",
                     "power", "lambda"], first_trace)
    files.append(path)
    passed = worst <= 1e-4
    lines = [f"example 1: max |rate - waterfill| = {worst:.3e} nats "
             f"(tolerance 1e-4) over {len(seeds)} seeds"]
    return ReproResult(1, passed, lines, files)


# --- example 2: 20-user solver convergence ----------------------------------


def repro_example_2(out_dir, seeds: list[int]) -> ReproResult:
    rows = []
    first_trace = None
    all_ok = True
    for seed in seeds:
        sc = generate_scenario(20, 4, 4, 0, (), db_to_linear(10.0), (), seed)
        res = dipa(sc, np.zeros(0), 1.0)
        budget_gap = abs(res.power - res.noise.budget) / res.noise.budget
        ok = res.converged and res.inner_converged
        all_ok &= ok
        rows.append([seed, res.objective, res.power, res.lambda_star,
                     budget_gap, ok])
        if first_trace is None:
            first_trace = [
                [i + 1, obj, power, lam]
                for i, (obj, power, lam) in enumerate(res.trace)
            ]
    files = []
    path = os.path.join(out_dir, "fig5_summary.csv")
    write_csv(path, ["seed", "rate_nats", "power", "lambda",
                     "budget_rel_gap", "converged"], rows)
    files.append(path)
    path = os.path.join(out_dir, "fig5_convergence.csv")
    write_csv(path, ["iteration", "objective_nats", "power", "lambda"],
              first_trace)
    files.append(path)
    lines = [f"example 2: K=20 solver converged on {len(seeds)} seeds: {all_ok}"]
    return ReproResult(2, all_ok, lines, files)


# --- example 3: outer-loop traces for two step sizes ------------------------


def oscillation_band(rates, window: int = 50) -> float:
    """Terminal spread (max - min) of a trace over its trailing window."""
    tail = rates[-max(2, window):]
    return float(max(tail) - min(tail))


def _ex3_trace(seed: int, step: float, outer: int) -> SolveReport:
    # spec-default solver tolerances: the terminal band must be dominated by
    # the step-size-driven fluctuation, not by inner-solver noise
    return sipa(
        example3_scenario(seed), step=step, eps=1e-300, max_outer=outer,
        dipa_options=ACCURATE,
    )


def repro_example_3(out_dir, seeds: list[int], outer: int = 300) -> ReproResult:
    rate_rows, power_rows, band_rows = [], [], []
    passed = True
    for seed in seeds:
        bands = {}
        for step in (0.1, 0.01):
            report = _ex3_trace(seed, step, outer)
            rates = [it.rate for it in report.trace]
            bands[step] = oscillation_band(rates)
            for it in report.trace:
                rate_rows.append([seed, step, it.iteration, it.rate,
                                  it.rate / LN2])
                power_rows.append(
                    [seed, step, it.iteration, to_db(it.sum_power)]
                    + [to_db(x) for x in it.interference]
                )
        band_rows.append([seed, bands[0.1], bands[0.01]])
        passed &= bands[0.01] < bands[0.1]
    files = []
    path = os.path.join(out_dir, "fig6_rate_trace.csv")
    write_csv(path, ["seed", "step", "iteration", "rate_nats", "rate_bits"],
              rate_rows)
    files.append(path)
    path = os.path.join(out_dir, "fig7_power_trace.csv")
    write_csv(path, ["seed", "step", "iteration", "sum_power_db",
                     "interference_db_1", "interference_db_2"], power_rows)
    files.append(path)
    path = os.path.join(out_dir, "fig6_bands.csv")
    write_csv(path, ["seed", "band_step_0.1", "band_step_0.01"], band_rows)
    files.append(path)
    lines = [f"example 3: terminal band shrinks with the smaller step on "
             f"{len(seeds)} seeds: {passed}"]
    return ReproResult(3, passed, lines, files)


# --- examples 4 and 5: Monte-Carlo sweeps ------------------------------------


def _mc_rate(args) -> float:
    """One Monte-Carlo point: mean solved rate for (p_u_db, l_ratio, seed)."""
    p_u_db, l_ratio, seed, with_pu = args
    n_pu = 1 if with_pu else 0
    sc = generate_scenario(5, 5, 3, n_pu, l_ratio or 1.0,
                           db_to_linear(p_u_db), 1.0, seed)
    report = sipa(sc, **MC_SOLVE)
    return report.weighted_sum_rate


def sweep_rate_vs_power(powers_db, seeds) -> list[list]:
    """Mean sum rate with and without the protected receiver, per budget."""
    cases = [(p, 1.0, s, w) for p in powers_db for s in seeds
             for w in (False, True)]
    rates = parallel_map(_mc_rate, cases)
    rows = []
    for i, p in enumerate(powers_db):
        block = rates[i * 2 * len(seeds):(i + 1) * 2 * len(seeds)]
        no_pu = float(np.mean(block[0::2]))
        with_pu = float(np.mean(block[1::2]))
        rows.append([p, no_pu, with_pu, no_pu / LN2, with_pu / LN2, len(seeds)])
    return rows


def repro_example_4(out_dir, seeds: list[int],
                    powers_db=(0.0, 5.0, 10.0, 15.0, 20.0)) -> ReproResult:
    rows = sweep_rate_vs_power(list(powers_db), seeds)
    path = os.path.join(out_dir, "fig8_rate_vs_power.csv")
    write_csv(path, ["p_u_db", "rate_no_pu_nats", "rate_single_pu_nats",
                     "rate_no_pu_bits", "rate_single_pu_bits", "n_seeds"], rows)
    passed = all(row[1] >= row[2] for row in rows)
    lines = [f"example 4: no-PU rate dominates the single-PU rate at every "
             f"budget: {passed}"]
    return ReproResult(4, passed, lines, [path])


def sweep_rate_vs_distance(l_ratios, powers_db, seeds) -> dict:
    """Mean sum rate vs the distance ratio, plus the no-PU ceiling."""
    cases = [(p, l, s, True) for p in powers_db for l in l_ratios for s in seeds]
    cases += [(p, 1.0, s, False) for p in powers_db for s in seeds]
    rates = parallel_map(_mc_rate, cases)
    out = {"l_ratios": list(l_ratios), "powers_db": list(powers_db),
           "pu": {}, "no_pu": {}}
    idx = 0
    for p in powers_db:
        per_l = []
        for _ in l_ratios:
            per_l.append(float(np.mean(rates[idx:idx + len(seeds)])))
            idx += len(seeds)
        out["pu"][p] = per_l
    for p in powers_db:
        out["no_pu"][p] = float(np.mean(rates[idx:idx + len(seeds)]))
        idx += len(seeds)
    return out


def repro_example_5(out_dir, seeds: list[int],
                    l_ratios=(1.0, 2.0, 4.0, 8.0, 12.0),
                    powers_db=(15.0, 20.0)) -> ReproResult:
    data = sweep_rate_vs_distance(list(l_ratios), list(powers_db), seeds)
    header = ["l_ratio"]
    for p in powers_db:
        header += [f"rate_nats_{fmt(p)}db", f"no_pu_nats_{fmt(p)}db",
                   f"saturating_{fmt(p)}db"]
    rows = []
    for i, l in enumerate(l_ratios):
        row = [l]
        for p in powers_db:
            rate = data["pu"][p][i]
            ceiling = data["no_pu"][p]
            row += [rate, ceiling, rate >= ceiling * (1.0 - 0.005)]
        rows.append(row)
    path = os.path.join(out_dir, "fig9_rate_vs_distance.csv")
    write_csv(path, header, rows)
    passed = True
    lines = []
    for p in powers_db:
        curve = data["pu"][p]
        span = max(curve) - min(curve)
        tol = 0.02 * max(span, 1e-12)
        monotone = all(curve[i + 1] >= curve[i] - tol
                       for i in range(len(curve) - 1))
        saturated = curve[-1] >= data["no_pu"][p] * (1.0 - 0.005)
        lines.append(f"example 5 @ {p:g} dB: monotone={monotone} "
                     f"saturated_at_{l_ratios[-1]:g}={saturated}")
        passed &= monotone
        if p == 15.0:
            passed &= saturated
    return ReproResult(5, passed, lines, [path])


def run_example(example: int, out_dir, seeds: list[int], **kwargs) -> ReproResult:
    os.makedirs(out_dir, exist_ok=True)
    dispatch = {
        1: repro_example_1,
        2: repro_example_2,
        3: repro_example_3,
        4: repro_example_4,
        5: repro_example_5,
    }
    if example not in dispatch:
        raise ValueError(f"example must be 1..5, got {example}")
    return dispatch[example](out_dir, seeds, **kwargs)


def region_weight_grid(k: int, n_points: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic positive weight vectors spanning the region boundary.

    K=1 repeats the trivial weight; K=2 walks the simplex edge with sharp
    corners so corner points approach the single-user optima; larger K uses
    seeded Philox draws over the simplex (floored at 0.01).
    """
    if k == 1:
        return [np.array([1.0])] * n_points
    if k == 2:
        if n_points == 1:
            alphas = [0.5]
        else:
            inner = np.linspace(0.1, 0.9, n_points - 2) if n_points > 2 else []
            alphas = [1e-4, *inner, 1.0 - 1e-4]
        return [np.array([1.0 - a, a]) for a in alphas]
    gen = np.random.Generator(np.random.Philox(key=seed))
    grid = []
    for _ in range(n_points):
        w = np.maximum(gen.random(k), 0.01)
        grid.append(w / w.sum())
    return grid
