"""Uplink-to-downlink covariance mapping with per-stream SINR preservation.

The optimal dual-uplink covariances are split into beamformed data streams
(eigenvectors and eigenpowers), MMSE receive filters and per-stream SINRs
are computed under successive decoding, and downlink stream powers are then
chosen so that every downlink stream achieves the same SINR under dirty
paper encoding. The resulting downlink covariances achieve the same
weighted sum rate; the downlink rates here are deliberately evaluated from
the SINR formulas (not from log-dets) so the equality is checked
numerically rather than holding by construction.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .linalg import eig_hermitian, hermitian_part, solve_pd
from .mac import NoiseShape, _as_rw, _ridged
from .scenario import Scenario, UserOrdering

STREAM_POWER_TOL = 1e-12


class DegenerateStream(ValueError):
    """A stream carries power but couples to its receive filter below
    tolerance; the power recursion would divide by ~0."""


@dataclass(frozen=True)
class Stream:
    """One spatial data stream of one user.

    v    : uplink transmit / downlink receive beamformer (N_r, unit norm).
    q    : uplink stream power (eigenvalue of the uplink covariance).
    u    : uplink receive / downlink transmit beamformer (N_t, unit norm).
    sinr : stream SINR in the dual uplink under successive decoding.
    p    : downlink stream power reproducing `sinr` under dirty paper coding.
    """

    user: int
    v: np.ndarray
    q: float
    u: np.ndarray | None = None
    sinr: float | None = None
    p: float | None = None


def decompose_streams(covariances) -> list[list[Stream]]:
    """Eigen-split each uplink covariance into streams, dropping power
    below 1e-12 (zero-power eigenmodes would poison the power recursion)."""
    covariances = np.asarray(covariances, dtype=complex)
    out = []
    for user, cov in enumerate(covariances):
        values, vectors = eig_hermitian(cov)
        streams = [
            Stream(user=user, v=vectors[:, j].copy(), q=float(values[j]))
            for j in range(values.size)
            if values[j] >= STREAM_POWER_TOL
        ]
        out.append(streams)
    return out


def mmse_beamformers(
    scenario: Scenario,
    ordering: UserOrdering,
    streams: list[list[Stream]],
    noise,
) -> list[list[Stream]]:
    """Attach MMSE receive filters and uplink SINRs to every stream.

    Decoding order follows the weight ordering: the interference seen by a
    stream comes from users decoded later (earlier sorted positions) plus
    the user's own earlier streams.
    """
    omega = _ridged(_as_rw(noise))
    out: list[list[Stream]] = [[] for _ in streams]
    for user in ordering.pi:
        h_h = scenario.channels[user].conj().T
        enriched = []
        for stream in streams[user]:
            rhs = h_h @ stream.v
            x = solve_pd(omega, rhs)
            norm = float(np.linalg.norm(x))
            if norm == 0.0:
                u = np.zeros_like(rhs)
                sinr = 0.0
            else:
                u = x / norm
                num = stream.q * abs(np.vdot(u, rhs)) ** 2
                den = float(np.vdot(u, omega @ u).real)
                sinr = float(num / den)
            enriched.append(dataclasses.replace(stream, u=u, sinr=max(sinr, 0.0)))
            omega = omega + stream.q * np.outer(rhs, rhs.conj())
        out[user] = enriched
    return out


def bc_power_recursion(
    scenario: Scenario,
    ordering: UserOrdering,
    streams: list[list[Stream]],
    sigma2: float | None = None,
) -> list[list[Stream]]:
    """Downlink stream powers matching the uplink SINRs stream by stream.

    Under dirty paper encoding in the weight order, a stream is interfered
    only by later-encoded users and later streams of its own user, so the
    powers are solved in exactly reverse encoding order (last user's last
    stream first).
    """
    sig2 = scenario.sigma2 if sigma2 is None else float(sigma2)
    flat = _encode_order(ordering, streams)
    if any(s.sinr is None or s.u is None for s in flat):
        raise ValueError("run mmse_beamformers before the power recursion")
    gains = _coupling_gains(scenario, flat)
    n = len(flat)
    powers = np.zeros(n)
    for t in range(n - 1, -1, -1):
        # encoding order == flat order, so interference is everything after t
        interference = sig2 + powers[t + 1:] @ gains[t + 1:, t]
        den = gains[t, t]
        if den <= STREAM_POWER_TOL**2:
            if flat[t].sinr <= 1e-12:
                powers[t] = 0.0
                continue
            raise DegenerateStream(
                f"stream (user {flat[t].user}) couples at {math.sqrt(den):.3e}"
            )
        powers[t] = flat[t].sinr * interference / den
    out: list[list[Stream]] = [[] for _ in streams]
    for t, stream in enumerate(flat):
        out[stream.user].append(dataclasses.replace(stream, p=float(powers[t])))
    return out


def _encode_order(ordering: UserOrdering, streams: list[list[Stream]]) -> list[Stream]:
    """Streams flattened in downlink encoding order (weight order, then
    stream index)."""
    flat: list[Stream] = []
    for user in ordering.pi:
        flat.extend(streams[user])
    return flat


def _coupling_gains(scenario: Scenario, flat: list[Stream]) -> np.ndarray:
    """gains[s, t] = |u_s^H H_{user(t)}^H v_t|^2 for every stream pair."""
    if not flat:
        return np.zeros((0, 0))
    u_mat = np.stack([s.u for s in flat])
    rhs = np.stack([scenario.channels[s.user].conj().T @ s.v for s in flat])
    return np.abs(u_mat.conj() @ rhs.T) ** 2


def assemble_bc(streams: list[list[Stream]], n_t: int) -> np.ndarray:
    """Downlink covariances Q_i = sum_j p_ij u_ij u_ij^H, stacked (K, N_t, N_t)."""
    out = np.zeros((len(streams), n_t, n_t), dtype=complex)
    for user, user_streams in enumerate(streams):
        for stream in user_streams:
            if stream.p is None:
                raise ValueError("run bc_power_recursion before assembling")
            out[user] += stream.p * np.outer(stream.u, stream.u.conj())
        out[user] = hermitian_part(out[user])
    return out


def bc_constraint_value(bc_covariances, q_t, q_u: float, pu_channels) -> float:
    """Multiplier-weighted downlink constraint value
    sum_j q_tj sum_i h_j^H Q_i h_j + q_u sum_i tr(Q_i)."""
    bc_covariances = np.asarray(bc_covariances, dtype=complex)
    q_t = np.atleast_1d(np.asarray(q_t, dtype=float))
    total = float(q_u) * float(np.einsum("kii->", bc_covariances).real)
    for j, h in enumerate(np.atleast_2d(np.asarray(pu_channels, dtype=complex))
                          if np.size(pu_channels) else []):
        total += q_t[j] * float(
            np.einsum("a,kab,b->", h.conj(), bc_covariances, h).real
        )
    return total


def bc_stream_sinrs(
    scenario: Scenario,
    ordering: UserOrdering,
    streams: list[list[Stream]],
    sigma2: float | None = None,
) -> list[list[float]]:
    """Downlink SINRs evaluated from the stream powers and beamformers."""
    sig2 = scenario.sigma2 if sigma2 is None else float(sigma2)
    flat = _encode_order(ordering, streams)
    gains = _coupling_gains(scenario, flat)
    powers = np.array([s.p or 0.0 for s in flat])
    out: list[list[float]] = [[] for _ in streams]
    for t, target in enumerate(flat):
        interference = sig2 + powers[t + 1:] @ gains[t + 1:, t]
        out[target.user].append(float(powers[t] * gains[t, t] / interference))
    return out


def per_user_rates_bc(
    scenario: Scenario,
    ordering: UserOrdering,
    streams: list[list[Stream]],
    sigma2: float | None = None,
) -> np.ndarray:
    """Downlink per-user rates (nats) from the SINR formulas."""
    sinrs = bc_stream_sinrs(scenario, ordering, streams, sigma2)
    return np.array([
        float(np.log1p(np.asarray(user_sinrs)).sum()) if user_sinrs else 0.0
        for user_sinrs in sinrs
    ])


def weighted_sum_rate_bc(
    scenario: Scenario,
    ordering: UserOrdering,
    streams: list[list[Stream]],
    sigma2: float | None = None,
) -> float:
    """Weighted downlink sum rate evaluated from the SINR formulas."""
    rates = per_user_rates_bc(scenario, ordering, streams, sigma2)
    return float(scenario.weights @ rates)


@dataclass(frozen=True)
class BcMapping:
    """Full uplink-to-downlink mapping for one solved point."""

    streams: list[list[Stream]]
    covariances: np.ndarray


def map_mac_to_bc(
    scenario: Scenario,
    ordering: UserOrdering,
    mac_covariances,
    noise: NoiseShape,
) -> BcMapping:
    """Run the whole mapping: eigen-split, MMSE filters, power recursion,
    downlink covariance assembly."""
    streams = decompose_streams(mac_covariances)
    streams = mmse_beamformers(scenario, ordering, streams, noise)
    streams = bc_power_recursion(scenario, ordering, streams)
    covariances = assemble_bc(streams, scenario.n_tx)
    return BcMapping(streams=streams, covariances=covariances)
