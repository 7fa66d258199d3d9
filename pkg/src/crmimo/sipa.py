"""Outer subgradient loop over the auxiliary constraint multipliers.

Each outer iteration solves the dual uplink for the current multipliers,
maps the solution to downlink covariances, measures the downlink constraint
values, and moves every multiplier along its constraint violation. The loop
stops when the multiplier-violation products are below tolerance and the
downlink point is primal feasible.

Multipliers are clamped at 1e-8 so the shaped noise covariance stays
positive definite; a multiplier that sits at the clamp for 50 consecutive
iterations is declared inactive. Once every interference multiplier is
inactive the solver falls back to the plain sum-power problem (one inner
solve, q_u normalized to 1), accepting the result only if it is feasible
for the dropped constraints: a feasible optimum of a relaxation is optimal
for the constrained problem.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bc import assemble_bc, map_mac_to_bc, per_user_rates_bc
from .mac import DipaOptions, DipaResult, dipa, per_user_rates_mac
from .scenario import DimensionMismatch, Scenario, UserOrdering, order_users

CLAMP = 1e-8
INACTIVE_AFTER = 50


class ConstraintMode(str, Enum):
    COGNITIVE = "cognitive"
    PER_ANTENNA = "per-antenna"
    SUM_POWER = "sum-power-only"


@dataclass(frozen=True)
class AuxiliaryPoint:
    """Outer multipliers: one per interference constraint plus the sum power."""

    q_t: np.ndarray
    q_u: float


@dataclass(frozen=True)
class OuterIterate:
    """One row of the outer-loop trace."""

    iteration: int
    q_t: np.ndarray
    q_u: float
    rate: float
    sum_power: float
    interference: np.ndarray
    water_level: float


@dataclass
class SolveReport:
    """Converged (or best-feasible) end-to-end solution."""

    aux: AuxiliaryPoint
    mac_cov: np.ndarray
    bc_cov: np.ndarray
    per_user_rates: np.ndarray
    weighted_sum_rate: float
    sum_power: float
    interference: np.ndarray
    iterations: int
    converged: bool
    water_level: float
    mode: ConstraintMode
    trace: list[OuterIterate] = field(default_factory=list)


def sipa_subgradient(bc_covariances, scenario: Scenario) -> np.ndarray:
    """Subgradient of the outer dual: per-constraint slack
    [P_tj - interference_j ..., P_u - sum power], from downlink covariances."""
    bc_covariances = np.asarray(bc_covariances, dtype=complex)
    slack = np.empty(scenario.n_pu + 1)
    for j, h in enumerate(scenario.pu_channels):
        slack[j] = scenario.p_t[j] - float(
            np.einsum("a,kab,b->", h.conj(), bc_covariances, h).real
        )
    slack[-1] = scenario.p_u - float(np.einsum("kii->", bc_covariances).real)
    return slack


def _constraint_values(bc_covariances, scenario: Scenario):
    slack = sipa_subgradient(bc_covariances, scenario)
    interference = scenario.p_t - slack[:-1]
    sum_power = scenario.p_u - slack[-1]
    return float(sum_power), interference


def _per_antenna_scenario(scenario: Scenario) -> Scenario:
    n_t = scenario.n_tx
    if scenario.p_t.shape == (n_t,):
        thresholds = scenario.p_t
    elif scenario.p_t.shape == (1,):
        thresholds = np.full(n_t, scenario.p_t[0])
    else:
        raise DimensionMismatch(
            f"per-antenna mode needs 1 or {n_t} thresholds, got {scenario.p_t.shape}"
        )
    return dataclasses.replace(
        scenario, pu_channels=np.eye(n_t, dtype=complex), p_t=thresholds
    )


def _finish(scenario, ordering, mode, result: DipaResult, mapping, q_t, q_u,
            iterations, converged, trace) -> SolveReport:
    sum_power, interference = _constraint_values(mapping.covariances, scenario)
    rates = per_user_rates_mac(scenario, ordering, result.covariances, result.noise)
    return SolveReport(
        aux=AuxiliaryPoint(q_t=np.asarray(q_t, dtype=float), q_u=float(q_u)),
        mac_cov=result.covariances,
        bc_cov=mapping.covariances,
        per_user_rates=rates,
        weighted_sum_rate=result.objective,
        sum_power=sum_power,
        interference=interference,
        iterations=iterations,
        converged=converged,
        water_level=result.lambda_star,
        mode=mode,
        trace=trace,
    )


def _solve_sum_power(scenario, ordering, mode, options, eps, iterations, trace,
                     q_init=None) -> SolveReport:
    """Exact reduction for an inactive interference set: q_t = 0, q_u = 1.

    The budget tolerance is tightened so the reported slackness product
    |1 * (sum_power - P_u)| stays within the outer tolerance."""
    rel = min(options.eps_power_rel, 0.25 * eps / max(scenario.p_u, 1.0))
    opts = dataclasses.replace(options, eps_power_rel=rel)
    result = dipa(scenario, np.zeros(scenario.n_pu), 1.0, ordering,
                  options=opts, q_init=q_init)
    mapping = map_mac_to_bc(scenario, ordering, result.covariances, result.noise)
    report = _finish(
        scenario, ordering, mode, result, mapping,
        np.zeros(scenario.n_pu), 1.0, iterations, True, trace,
    )
    trace.append(OuterIterate(
        iteration=iterations + 1, q_t=np.zeros(scenario.n_pu), q_u=1.0,
        rate=report.weighted_sum_rate, sum_power=report.sum_power,
        interference=report.interference.copy(),
        water_level=result.lambda_star,
    ))
    return report


def sipa(
    scenario: Scenario,
    *,
    step: float = 0.1,
    eps: float = 1e-3,
    mode: ConstraintMode = ConstraintMode.COGNITIVE,
    diminishing: bool = False,
    max_outer: int = 5000,
    q_t_init=None,
    q_u_init: float = 1.0,
    warm_start: bool = True,
    feasibility_rel: float = 1e-4,
    dipa_options: DipaOptions | None = None,
) -> SolveReport:
    """Solve the full weighted sum-rate problem with interference constraints.

    `step` is the subgradient step (constant by default, `step/sqrt(n)` when
    `diminishing`). Convergence requires every multiplier-violation product
    to be at most `eps` and the downlink point to satisfy both constraint
    families within `feasibility_rel`. When the iteration budget runs out,
    the best feasible iterate seen is returned flagged `converged=False`.
    """
    if step <= 0 or eps <= 0:
        raise ValueError("step and eps must be positive")
    mode = ConstraintMode(mode)
    work = scenario
    if mode is ConstraintMode.PER_ANTENNA:
        work = _per_antenna_scenario(scenario)
    ordering = order_users(work.weights)
    options = dipa_options or DipaOptions()
    trace: list[OuterIterate] = []

    if mode is ConstraintMode.SUM_POWER or work.n_pu == 0:
        if mode is ConstraintMode.SUM_POWER and work.n_pu:
            work = dataclasses.replace(
                work,
                pu_channels=np.zeros((0, work.n_tx), dtype=complex),
                p_t=np.zeros(0),
            )
        return _solve_sum_power(work, ordering, mode, options, eps, 0, trace)

    n_pu = work.n_pu
    q_t = np.full(n_pu, 1.0) if q_t_init is None else \
        np.array(np.broadcast_to(np.asarray(q_t_init, dtype=float), (n_pu,)))
    q_u = float(q_u_init)
    if np.any(q_t < 0) or q_u < 0:
        raise ValueError("initial multipliers must be nonnegative")
    q_t = np.maximum(q_t, CLAMP)
    q_u = max(q_u, CLAMP)

    at_clamp_t = np.zeros(n_pu, dtype=int)
    at_clamp_u = 0
    # Catastrophe rail: every move is confined to [q/2, 2q]. On top of that a
    # monotone per-coordinate damper shrinks the step whenever rail-clipped
    # moves alternate direction (a factor-2 limit cycle across the optimum);
    # unclipped dynamics -- in particular the constant-step oscillation the
    # study's traces exhibit -- are never touched.
    gamma_t = np.ones(n_pu)
    gamma_u = 1.0
    clipped_t = np.zeros(n_pu, dtype=bool)
    clipped_u = False
    prev_viol_t = np.zeros(n_pu)
    prev_viol_u = 0.0
    warm_cov = None
    level_hint = None
    best: SolveReport | None = None
    last_state = None

    for it in range(1, max_outer + 1):
        result = dipa(
            work, q_t, q_u, ordering, options=options,
            q_init=warm_cov if warm_start else None,
            lambda_hint=level_hint if warm_start else None,
        )
        mapping = map_mac_to_bc(work, ordering, result.covariances, result.noise)
        sum_power, interference = _constraint_values(mapping.covariances, work)
        viol_t = interference - work.p_t
        viol_u = sum_power - work.p_u

        report_q_t = np.where(at_clamp_t >= INACTIVE_AFTER, 0.0, q_t)
        report_q_u = 0.0 if at_clamp_u >= INACTIVE_AFTER else q_u
        trace.append(OuterIterate(
            iteration=it, q_t=q_t.copy(), q_u=q_u, rate=result.objective,
            sum_power=sum_power, interference=interference.copy(),
            water_level=result.lambda_star,
        ))

        feasible = (
            np.all(interference <= work.p_t * (1.0 + feasibility_rel))
            and sum_power <= work.p_u * (1.0 + feasibility_rel)
        )
        products_ok = (
            np.all(np.abs(report_q_t * viol_t) <= eps)
            and abs(report_q_u * viol_u) <= eps
        )
        if feasible and products_ok:
            return _finish(work, ordering, mode, result, mapping,
                           report_q_t, report_q_u, it, True, trace)
        if feasible and (best is None
                         or result.objective > best.weighted_sum_rate):
            best = _finish(work, ordering, mode, result, mapping,
                           report_q_t, report_q_u, it, False, trace)
        last_state = (result, mapping, report_q_t, report_q_u)

        t_n = step / math.sqrt(it) if diminishing else step
        shrink_t = clipped_t & (viol_t * prev_viol_t < 0)
        gamma_t = np.where(shrink_t, np.maximum(gamma_t * 0.5, 1e-6), gamma_t)
        if clipped_u and viol_u * prev_viol_u < 0:
            gamma_u = max(gamma_u * 0.5, 1e-6)
        raw_t = q_t + t_n * gamma_t * viol_t
        clipped_t = (raw_t < 0.5 * q_t) | (raw_t > 2.0 * q_t)
        q_t = np.clip(raw_t, 0.5 * q_t, 2.0 * q_t)
        raw_u = q_u + t_n * gamma_u * viol_u
        clipped_u = not (0.5 * q_u <= raw_u <= 2.0 * q_u)
        q_u = min(max(raw_u, 0.5 * q_u), 2.0 * q_u)
        prev_viol_t = viol_t
        prev_viol_u = viol_u

        hit_t = q_t < CLAMP
        q_t = np.maximum(q_t, CLAMP)
        at_clamp_t = np.where(hit_t, at_clamp_t + 1, 0)
        if q_u < CLAMP:
            q_u = CLAMP
            at_clamp_u += 1
        else:
            at_clamp_u = 0

        if np.all(at_clamp_t >= INACTIVE_AFTER):
            candidate = _solve_sum_power(
                work, ordering, mode, options, eps, it, trace, q_init=warm_cov,
            )
            if np.all(candidate.interference
                      <= work.p_t * (1.0 + feasibility_rel)):
                return candidate
            # still binding somewhere; resume the loop undamped
            at_clamp_t[:] = 0
            gamma_t[:] = 1.0
            gamma_u = 1.0

        warm_cov = result.covariances
        level_hint = result.lambda_star

    if best is not None:
        return dataclasses.replace(best, converged=False, iterations=max_outer)
    return _feasible_rescale(work, ordering, mode, last_state, max_outer, trace)


def _feasible_rescale(scenario, ordering, mode, last_state, iterations,
                      trace) -> SolveReport:
    """Fallback when no iterate was feasible: shrink the last downlink point
    onto the constraint set (constraints are linear in the covariances) and
    report its actually-achieved downlink rates, flagged non-converged."""
    result, mapping, q_t, q_u = last_state
    sum_power, interference = _constraint_values(mapping.covariances, scenario)
    rho = min(1.0, scenario.p_u / max(sum_power, 1e-300))
    for j in range(scenario.n_pu):
        rho = min(rho, scenario.p_t[j] / max(interference[j], 1e-300))
    streams = [
        [dataclasses.replace(s, p=(s.p or 0.0) * rho) for s in user_streams]
        for user_streams in mapping.streams
    ]
    bc_cov = assemble_bc(streams, scenario.n_tx)
    sum_power, interference = _constraint_values(bc_cov, scenario)
    rates = per_user_rates_bc(scenario, ordering, streams)
    return SolveReport(
        aux=AuxiliaryPoint(q_t=np.asarray(q_t, dtype=float), q_u=float(q_u)),
        mac_cov=result.covariances,
        bc_cov=bc_cov,
        per_user_rates=rates,
        weighted_sum_rate=float(scenario.weights @ rates),
        sum_power=sum_power,
        interference=interference,
        iterations=iterations,
        converged=False,
        water_level=result.lambda_star,
        mode=mode,
        trace=trace,
    )


@dataclass
class RegionPoint:
    """One weight vector of a capacity-region sweep."""

    weights: np.ndarray
    report: SolveReport | None
    error: str | None = None


def region_sweep(scenario: Scenario, weight_grid, **solve_kwargs) -> list[RegionPoint]:
    """Solve one point per weight vector; failures are recorded, not raised."""
    points = []
    for weights in weight_grid:
        weights = np.asarray(weights, dtype=float)
        try:
            report = sipa(scenario.with_weights(weights), **solve_kwargs)
            points.append(RegionPoint(weights=weights, report=report))
        except Exception as exc:  # noqa: BLE001 - sweep must survive bad points
            points.append(RegionPoint(weights=weights, report=None, error=str(exc)))
    return points
