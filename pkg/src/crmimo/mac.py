"""Dual multiple-access-channel solver.

For fixed auxiliary multipliers (q_t per protected receiver, q_u for the sum
power) the downlink problem is equivalent to a weighted sum-rate
maximization over uplink covariances Q_i under a single budget
``sigma2 * sum_i tr(Q_i) <= P`` with shaped noise
``R_w = sum_j q_tj h_j h_j^H + q_u I`` and ``P = sum_j q_tj P_tj + q_u P_u``.

That problem is solved by bisection on the water level (the budget
multiplier): for each candidate level, a cyclic projected gradient ascent
drives every covariance to stationarity of the Lagrangian, and the sign of
the budget residual steers the bisection.

Rates are natural-log based and reported as log-det differences against the
noise floor, so zero covariances give exactly zero rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import NotPositiveDefinite, hermitian_part, inv_pd, logdet_pd
from .scenario import Scenario, UserOrdering, order_users

RIDGE_REL = 1e-9


class AllZeroAuxiliaries(ValueError):
    """Every auxiliary multiplier is (numerically) zero; the dual noise
    covariance would be singular and the budget empty."""


@dataclass(frozen=True)
class NoiseShape:
    """Shaped dual-uplink noise covariance and the matching scalar budget."""

    r_w: np.ndarray
    q_t: np.ndarray
    q_u: float
    budget: float


def noise_shape(scenario: Scenario, q_t, q_u: float) -> NoiseShape:
    """Build R_w = sum_j q_tj h_j h_j^H + q_u I and P = q_t.P_t + q_u P_u."""
    q_t = np.atleast_1d(np.asarray(q_t, dtype=float))
    if q_t.shape != (scenario.n_pu,):
        raise ValueError(
            f"expected {scenario.n_pu} interference multipliers, got {q_t.shape}"
        )
    if np.any(q_t < 0) or q_u < 0:
        raise ValueError("auxiliary multipliers must be nonnegative")
    if (q_t < 1e-8).all() and q_u < 1e-8:
        raise AllZeroAuxiliaries("all auxiliary multipliers below 1e-8")
    n_t = scenario.n_tx
    r_w = float(q_u) * np.eye(n_t, dtype=complex)
    for j in range(scenario.n_pu):
        h = scenario.pu_channels[j][:, None]
        r_w = r_w + q_t[j] * (h @ h.conj().T)
    budget = float(q_t @ scenario.p_t + q_u * scenario.p_u)
    return NoiseShape(hermitian_part(r_w), q_t, float(q_u), budget)


def _ridged(r_w: np.ndarray) -> np.ndarray:
    """R_w plus a trace-relative ridge; keeps rank-one corners invertible."""
    n = r_w.shape[0]
    ridge = RIDGE_REL * max(np.trace(r_w).real, 0.0) / n
    return r_w + ridge * np.eye(n, dtype=complex)


def _as_rw(noise) -> np.ndarray:
    return noise.r_w if isinstance(noise, NoiseShape) else np.asarray(noise, dtype=complex)


def mac_power(covariances, sigma2: float = 1.0) -> float:
    """sigma2 * sum_i tr(Q_i), the budget-side power of an uplink point."""
    covariances = np.asarray(covariances)
    return float(sigma2 * np.einsum("kii->", covariances).real)


def _chol_logdets(mats: np.ndarray) -> np.ndarray:
    """Stacked log-determinants via Cholesky; raises LinAlgError off the cone."""
    chols = np.linalg.cholesky(mats)
    diags = np.einsum("...ii->...i", chols).real
    return 2.0 * np.log(diags).sum(axis=-1)


def _sorted_stacks(scenario: Scenario, ordering: UserOrdering):
    hs = scenario.channels[list(ordering.pi)]
    return hs, hs.conj().transpose(0, 2, 1)


def _interference_terms(hs_h, hs, covariances_sorted):
    """S_i = H_i^H Q_i H_i for each user, stacked (K, N_t, N_t)."""
    return np.einsum("kab,kbc,kcd->kad", hs_h, covariances_sorted, hs)


def weighted_sum_rate_mac(scenario, ordering, covariances, noise) -> float:
    """Weighted sum rate of the dual uplink under successive decoding.

    `covariances` is a (K, N_r, N_r) stack indexed like the scenario users;
    `noise` is a NoiseShape or an explicit R_w matrix.
    """
    deltas, lds, ld0 = _ladder_logdets(scenario, ordering, covariances, noise)
    return float(deltas @ (lds - ld0))


def per_user_rates_mac(scenario, ordering, covariances, noise) -> np.ndarray:
    """Per-user uplink rates (nats), indexed like the scenario users."""
    _, lds, ld0 = _ladder_logdets(scenario, ordering, covariances, noise)
    rates_sorted = np.diff(np.concatenate([[ld0], lds]))
    rates = np.empty_like(rates_sorted)
    rates[list(ordering.pi)] = np.maximum(rates_sorted, 0.0)
    return rates


def _ladder_logdets(scenario, ordering, covariances, noise):
    covariances = np.asarray(covariances, dtype=complex)
    hs, hs_h = _sorted_stacks(scenario, ordering)
    terms = _interference_terms(hs_h, hs, covariances[list(ordering.pi)])
    f0 = _ridged(_as_rw(noise))
    ladder = f0 + np.cumsum(terms, axis=0)
    try:
        lds = _chol_logdets(ladder)
        ld0 = logdet_pd(f0)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return np.asarray(ordering.deltas), lds, ld0


def mac_gradient(scenario, ordering, covariances, noise, user: int) -> np.ndarray:
    """Gradient of the weighted sum rate with respect to one user's covariance.

    Equals sum over sorted positions j at or after the user's position of
    delta_j * H F_j^{-1} H^H, with F_j the noise-plus-decoded-signal
    covariance after j users.
    """
    covariances = np.asarray(covariances, dtype=complex)
    hs, hs_h = _sorted_stacks(scenario, ordering)
    terms = _interference_terms(hs_h, hs, covariances[list(ordering.pi)])
    f0 = _ridged(_as_rw(noise))
    ladder = f0 + np.cumsum(terms, axis=0)
    deltas = np.asarray(ordering.deltas)
    pos = ordering.inverse[user]
    idx = np.flatnonzero(deltas > 0)
    idx = idx[idx >= pos]
    try:
        invs = np.linalg.inv(ladder[idx])
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    h = scenario.channels[user]
    grad = h @ np.tensordot(deltas[idx], invs, axes=1) @ h.conj().T
    return hermitian_part(grad)


def _project_psd(a: np.ndarray) -> np.ndarray:
    """Eigenvalue clipping without the exported kernel's tie bookkeeping."""
    w, v = np.linalg.eigh(a)
    if w[0] >= 0.0:
        return a
    np.maximum(w, 0.0, out=w)
    return hermitian_part((v * w) @ v.conj().T)


@dataclass
class InnerResult:
    """Outcome of the fixed-water-level ascent over the covariances."""

    covariances: np.ndarray
    converged: bool
    sweeps: int
    objective: float
    lagrangian: float


def inner_ascent(
    scenario: Scenario,
    ordering: UserOrdering,
    noise,
    water_level: float,
    q_init=None,
    *,
    step: float = 0.1,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> InnerResult:
    """Cyclic projected gradient ascent on the water-level Lagrangian.

    Each user's covariance takes the step ``[Q + t (grad f - level*sigma2*I)]+``
    with `t` halved whenever the Lagrangian would decrease, so accepted
    iterates are nondecreasing. The loop stops once every user's projected
    gradient has squared Frobenius norm at most `tol` within one sweep, or
    returns the best iterate flagged `converged=False` after `max_iter`
    sweeps (the water level 0 makes the power direction unbounded and always
    ends that way).
    """
    if water_level < 0:
        raise ValueError("water level must be nonnegative")
    if step <= 0:
        raise ValueError("step must be positive")
    k_users = scenario.n_users
    n_r = scenario.n_rx
    sig2 = scenario.sigma2
    deltas = np.asarray(ordering.deltas)
    hs, hs_h = _sorted_stacks(scenario, ordering)
    f0 = _ridged(_as_rw(noise))
    eye_r = np.eye(n_r, dtype=complex)
    shrink = water_level * sig2

    if q_init is None:
        q = np.zeros((k_users, n_r, n_r), dtype=complex)
    else:
        q = np.array(np.asarray(q_init, dtype=complex)[list(ordering.pi)])
    terms = _interference_terms(hs_h, hs, q)

    act = np.flatnonzero(deltas > 0)
    act_deltas = deltas[act]

    # Per-user step state: grows on clean acceptance, halves on backtracking.
    # The base `step` only seeds it; poorly conditioned instances need steps
    # orders of magnitude above any fixed value to converge in useful time.
    t_user = np.full(k_users, float(step))
    t_cap = step * 2.0 ** 40

    sweeps = 0
    converged = False
    while sweeps < max_iter:
        sweeps += 1
        # F at the weight-carrying positions, refreshed with current terms
        ladder = f0 + np.cumsum(terms, axis=0)
        f_cur = ladder[act].copy()
        ld_cur = _chol_logdets(f_cur)
        live = act.size  # positions in f_cur still at/after the active user
        max_pg = 0.0
        moved = False
        for k in range(k_users):
            off = act.size - live
            if live == 1:
                bsum = act_deltas[-1] * np.linalg.inv(f_cur[-1])
            else:
                invs = np.linalg.inv(f_cur[off:])
                bsum = np.tensordot(act_deltas[off:], invs, axes=1)
            grad = hermitian_part(hs[k] @ bsum @ hs_h[k])
            grad -= shrink * eye_r
            t_k = t_user[k]
            cand = _project_psd(q[k] + t_k * grad)
            diff = cand - q[k]
            pg_norm2 = float(np.vdot(diff, diff).real) / (t_k * t_k)
            # Stationarity is declared against the nominal step. The residual
            # ||proj(Q + t*grad) - Q|| / t is nonincreasing in t, so a larger
            # adapted step that already exceeds tol decides without a probe;
            # only the converse case needs the nominal-step measurement.
            if pg_norm2 <= tol and t_k > step:
                probe = _project_psd(q[k] + step * grad)
                dprobe = probe - q[k]
                pg_norm2 = float(np.vdot(dprobe, dprobe).real) / (step * step)
            max_pg = max(max_pg, pg_norm2)
            if pg_norm2 > tol:
                t_eff = t_k
                while True:
                    term_new = hs_h[k] @ cand @ hs[k]
                    shift = term_new - terms[k]
                    f_new = f_cur[off:] + shift
                    try:
                        ld_new = _chol_logdets(f_new)
                        gain = float(act_deltas[off:] @ (ld_new - ld_cur[off:]))
                    except np.linalg.LinAlgError:
                        gain = -np.inf
                    gain -= shrink * float(np.trace(cand - q[k]).real)
                    if gain >= 0.0:
                        q[k] = cand
                        terms[k] = term_new
                        f_cur[off:] = f_new
                        ld_cur[off:] = ld_new
                        moved = True
                        t_user[k] = min(2.0 * t_eff, t_cap) if t_eff == t_k \
                            else t_eff
                        break
                    t_eff *= 0.5
                    if t_eff < step * 2.0 ** -60:
                        break  # numerically stationary; keep the old iterate
                    cand = _project_psd(q[k] + t_eff * grad)
            if live and act[off] == k:
                live -= 1
        if max_pg <= tol and shrink > 0.0:
            # at zero water level the power direction is unbounded and a
            # small gradient certifies nothing; never declare convergence
            converged = True
            break
        if not moved:
            break  # pinned by rounding; further sweeps cannot progress
        if sig2 * np.einsum("kii->", q).real > 1e12:
            break  # diverging iterate sequence

    ladder = f0 + np.cumsum(terms, axis=0)
    objective = float(deltas @ (_chol_logdets(ladder) - _chol_logdets(f0[None])[0]))
    lagrangian = objective - shrink * float(np.einsum("kii->", q).real)
    out = np.empty_like(q)
    out[list(ordering.pi)] = q
    return InnerResult(out, converged, sweeps, objective, lagrangian)


@dataclass
class DipaResult:
    """Converged dual-uplink solve for fixed auxiliary multipliers."""

    covariances: np.ndarray
    lambda_star: float
    objective: float
    power: float
    noise: NoiseShape
    converged: bool
    inner_converged: bool
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class DipaOptions:
    """Tolerances of the bisection + ascent solver (spec defaults)."""

    step: float = 0.1
    eps: float = 1e-6            # water-level bracket width / inactive test
    eps_power_rel: float = 1e-5  # budget residual tolerance, relative to P
    grad_tol: float = 1e-8       # squared projected-gradient threshold
    inner_max_iter: int = 10_000
    max_bisect: int = 200


def dipa(
    scenario: Scenario,
    q_t,
    q_u: float,
    ordering: UserOrdering | None = None,
    *,
    options: DipaOptions | None = None,
    q_init=None,
    lambda_hint: float | None = None,
) -> DipaResult:
    """Solve the dual-uplink weighted sum-rate problem by water-level bisection.

    The water level rises when the ascent overspends the budget and falls
    otherwise. When even a level near zero leaves the budget slack, the
    constraint is inactive and the level is reported as exactly 0. The
    returned covariances always satisfy the budget within P * (1 + 1e-6).
    """
    opt = options or DipaOptions()
    if ordering is None:
        ordering = order_users(scenario.weights)
    ns = noise_shape(scenario, q_t, q_u)
    budget = ns.budget
    if budget <= 0:
        raise ValueError("budget must be positive")
    sig2 = scenario.sigma2
    eps_power = opt.eps_power_rel * budget

    f0_inv = inv_pd(_ridged(ns.r_w))
    w_top = float(np.max(scenario.weights))
    spread = 0.0
    for h in scenario.channels:
        vals = np.linalg.eigvalsh(hermitian_part(h @ f0_inv @ h.conj().T))
        spread = max(spread, float(vals[-1]))
    lam_cap = w_top * spread / sig2 + 1e-12
    # marginal-rate-per-power guess; the doubling loop repairs underestimates
    hi = min(lam_cap, 4.0 * w_top * scenario.n_users * scenario.n_rx / budget)
    if lambda_hint is not None and 0 < lambda_hint:
        # probe the hint itself first: on warm restarts it is usually
        # already inside the acceptance window
        hi = min(lam_cap, lambda_hint)

    # The budget tolerance needs the inner solves to resolve power changes
    # finer than the projected-gradient threshold allows once the bracket is
    # narrow, so the threshold starts matched to it and is tightened further
    # adaptively if the bracket still collapses off-budget.
    tol_cur = min(opt.grad_tol, (0.05 * eps_power) ** 2)

    def run(level, warm):
        return inner_ascent(
            scenario, ordering, ns, level, warm,
            step=opt.step, tol=tol_cur, max_iter=opt.inner_max_iter,
        )

    trace = []
    inner_ok = True
    warm = q_init
    evals = 0

    def evaluate(level):
        nonlocal warm, inner_ok, evals
        result = run(level, warm)
        inner_ok &= result.converged
        warm = result.covariances
        power = mac_power(result.covariances, sig2)
        trace.append((result.objective, power, level))
        evals += 1
        return result, power

    def acceptable(power):
        # budget met from below within tolerance, never above the hard cap
        return budget - eps_power <= power <= budget * (1.0 + 1e-6)

    res, pw = evaluate(hi)
    guard = 0
    while pw > budget and guard < 60:
        hi = min(2.0 * hi, lam_cap) if hi < lam_cap else 2.0 * hi
        res, pw = evaluate(hi)
        guard += 1

    feasible = (res, pw, hi)  # budget-respecting fallback iterate
    lo = 0.0
    pw_lo = None  # power at lo is unknown while lo sits at 0 (unbounded there)
    pw_hi = pw
    best = None
    converged = False
    if acceptable(pw):
        best = (res, pw, hi)
        converged = True

    def propose():
        # Secant through the bracket endpoints when both powers are known,
        # clipped away from the edges; plain midpoint otherwise. The bracket
        # update logic is unchanged, points are just picked smarter.
        if pw_lo is not None and pw_lo > pw_hi:
            lam = hi - (pw_hi - budget) * (hi - lo) / (pw_hi - pw_lo)
            margin = 0.05 * (hi - lo)
            return min(max(lam, lo + margin), hi - margin)
        return 0.5 * (lo + hi)

    while not converged and evals < opt.max_bisect:
        lam = propose()
        res, pw = evaluate(lam)
        if acceptable(pw):
            best = (res, pw, lam)
            converged = True
            break
        if pw > budget:
            lo, pw_lo = lam, pw
        else:
            hi, pw_hi = lam, pw
            feasible = (res, pw, lam)
            if hi <= opt.eps:
                # budget slack all the way down: constraint inactive
                best = (res, pw, 0.0)
                converged = True
                break
        stuck = hi - lo <= 1e-14 * max(1.0, hi)
        if pw_lo is not None and not stuck:
            # The budget window is unreachable only once the power span of
            # the bracket itself cannot be resolved any further.
            stuck = abs(pw_lo - pw_hi) <= max(eps_power, 1e-12 * budget)
        if stuck:
            # Bracket exhausted without matching the budget: the inner
            # tolerance limits how finely power responds to the level, and
            # early loose evaluations may have mis-steered the bracket.
            # Tighten the tolerance and rebuild a certified bracket.
            if tol_cur <= 1e-16:
                break
            tol_cur = max(tol_cur * 1e-4, 1e-16)
            center = 0.5 * (lo + hi)
            width = max(64.0 * (hi - lo), 1e-3 * center)
            hi = center + width
            while evals < opt.max_bisect:
                res, pw = evaluate(hi)
                if acceptable(pw):
                    best = (res, pw, hi)
                    converged = True
                    break
                if pw <= budget:
                    pw_hi = pw
                    feasible = (res, pw, hi)
                    break
                width *= 4.0
                hi = center + width
            if converged:
                break
            lo, pw_lo = max(center - width, 0.0), None
            while lo > 0.0 and evals < opt.max_bisect:
                res, pw = evaluate(lo)
                if acceptable(pw):
                    best = (res, pw, lo)
                    converged = True
                    break
                if pw > budget:
                    pw_lo = pw
                    break
                # still under budget: this point bounds the level from above
                hi, pw_hi = lo, pw
                feasible = (res, pw, lo)
                lo = max(center - 4.0 * (center - lo), 0.0)
            if converged:
                break
    if best is None:
        best = feasible  # budget-feasible side of the collapsed bracket

    res, pw, lam_star = best
    if pw > budget * (1.0 + 1e-6):
        res, pw, lam_star = feasible
        converged = False
    objective = weighted_sum_rate_mac(scenario, ordering, res.covariances, ns)
    return DipaResult(
        covariances=res.covariances,
        lambda_star=float(lam_star),
        objective=float(objective),
        power=float(pw),
        noise=ns,
        converged=converged,
        inner_converged=inner_ok,
        trace=trace,
    )


def subgradient_of_dual(covariances, budget: float, sigma2: float = 1.0) -> float:
    """Budget residual P - sigma2 * sum_i tr(Q_i); steers the water level."""
    return float(budget - mac_power(covariances, sigma2))


def waterfill_single_user(h, p: float, sigma2: float = 1.0):
    """Water-filling over the singular modes of one channel.

    Returns the optimal transmit covariance (over the right singular
    vectors of `h`) and the achieved rate in nats for a power budget `p`.
    """
    if p < 0:
        raise ValueError("power budget must be nonnegative")
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    n_t = h.shape[1]
    _, s, vh = np.linalg.svd(h)
    s = s[s > 1e-15 * max(s[0], 1.0)] if s.size else s
    if s.size == 0 or p == 0.0:
        return np.zeros((n_t, n_t), dtype=complex), 0.0
    inv_gain = sigma2 / (s * s)  # ascending since s is descending
    powers = None
    for m in range(s.size, 0, -1):
        mu = (p + inv_gain[:m].sum()) / m
        if mu > inv_gain[m - 1]:
            powers = np.zeros(s.size)
            powers[:m] = mu - inv_gain[:m]
            break
    rate = float(np.log1p(powers * s * s / sigma2).sum())
    pad = np.zeros(n_t)
    pad[: s.size] = powers
    cov = (vh.conj().T * pad) @ vh
    return hermitian_part(cov), rate
