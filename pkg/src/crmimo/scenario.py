"""Problem instances: channels, weights, budgets, and their (de)serialization.

A scenario bundles the downlink channel matrices of the served users, the
channel vectors toward the protected (primary) receivers, the rate weights,
and the power/interference budgets. All powers held by a `Scenario` are
linear and relative to unit noise; scenario files store them in dB and are
converted on load.

Random instances are reproducible across platforms: uniforms come from the
counter-based Philox-4x64-10 generator keyed by the seed, and Gaussians are
derived by an explicit Box-Muller map (pairs of consecutive uniforms
(u1, u2) -> r*cos(2*pi*u2), r*sin(2*pi*u2) with r = sqrt(-2*ln(1-u1))).
Each complex entry consumes exactly one Box-Muller pair: (z0 + i*z1)/sqrt(2).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np


class SchemaError(ValueError):
    """A scenario file is missing a field or holds a value of the wrong kind."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"scenario schema violation at '{field}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DimensionMismatch(ValueError):
    """Channel entries are inconsistent with the declared (K, N_t, N_r)."""


def db_to_linear(db: float) -> float:
    """Power in dB relative to unit noise -> linear power."""
    return 10.0 ** (float(db) / 10.0)


def linear_to_db(x: float) -> float:
    """Linear power -> dB, nudged by ulps so the conversion round-trips.

    10*log10 followed by 10**(./10) is not always bit-exact; when a
    representable dB value maps back onto `x` exactly, return that one.
    """
    x = float(x)
    if x <= 0.0:
        return float("-inf")
    d = 10.0 * math.log10(x)
    if db_to_linear(d) == x:
        return d
    for _ in range(4):
        up = math.nextafter(d, math.inf)
        if db_to_linear(up) == x:
            return up
        down = math.nextafter(d, -math.inf)
        if db_to_linear(down) == x:
            return down
        d = up if abs(db_to_linear(up) - x) < abs(db_to_linear(down) - x) else down
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class Scenario:
    """One optimization instance.

    channels     : (K, N_r, N_t) complex downlink channel matrices H_i.
    pu_channels  : (N_pu, N_t) complex channel vectors toward each protected
                   receiver (N_pu = 0 means a plain sum-power problem).
    weights      : (K,) positive rate weights.
    p_u          : sum transmit power budget (linear).
    p_t          : (N_pu,) interference thresholds (linear).
    sigma2       : receiver noise variance (linear, default 1).
    seed         : seed that generated the channels (0 for hand-built ones).
    """

    channels: np.ndarray
    pu_channels: np.ndarray
    weights: np.ndarray
    p_u: float
    p_t: np.ndarray
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=complex)
        if ch.ndim != 3:
            raise DimensionMismatch(f"channels must be (K, N_r, N_t), got {ch.shape}")
        k, n_r, n_t = ch.shape
        if k < 1 or n_r < 1 or n_t < 1:
            raise DimensionMismatch(f"empty channel block {ch.shape}")
        raw_pu = np.asarray(self.pu_channels)
        if raw_pu.size:
            if raw_pu.shape[-1] != n_t:
                raise DimensionMismatch(
                    f"pu_channels must have {n_t} entries per vector, "
                    f"got shape {raw_pu.shape}"
                )
            pu = np.ascontiguousarray(raw_pu, dtype=complex).reshape(-1, n_t)
        else:
            pu = np.zeros((0, n_t), dtype=complex)
        w = np.ascontiguousarray(self.weights, dtype=float)
        if w.shape != (k,):
            raise DimensionMismatch(f"expected {k} weights, got shape {w.shape}")
        if not np.all(w > 0):
            raise ValueError("all weights must be positive")
        pt = np.atleast_1d(np.ascontiguousarray(self.p_t, dtype=float))
        if pt.shape != (pu.shape[0],):
            raise DimensionMismatch(
                f"expected {pu.shape[0]} interference thresholds, got {pt.shape}"
            )
        if self.p_u <= 0 or np.any(pt <= 0) or self.sigma2 <= 0:
            raise ValueError("budgets and noise variance must be positive")
        for arr in (ch, pu, w, pt):
            arr.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "pu_channels", pu)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "p_t", pt)
        object.__setattr__(self, "p_u", float(self.p_u))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_users(self) -> int:
        return self.channels.shape[0]

    @property
    def n_rx(self) -> int:
        return self.channels.shape[1]

    @property
    def n_tx(self) -> int:
        return self.channels.shape[2]

    @property
    def n_pu(self) -> int:
        return self.pu_channels.shape[0]

    def with_weights(self, weights) -> "Scenario":
        """Same instance with the rate weights replaced."""
        return dataclasses.replace(self, weights=np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class UserOrdering:
    """Decoding order: users sorted by nonincreasing weight.

    pi       : permutation (0-based); pi[k] is the original index of the user
               in sorted position k.
    deltas   : consecutive weight differences along pi, with an implicit
               trailing zero weight (deltas sums to the largest weight).
    """

    pi: tuple[int, ...]
    deltas: np.ndarray

    @property
    def inverse(self) -> tuple[int, ...]:
        inv = [0] * len(self.pi)
        for pos, user in enumerate(self.pi):
            inv[user] = pos
        return tuple(inv)


def order_users(weights) -> UserOrdering:
    """Stable descending sort of the weights (ties keep original order)."""
    w = np.asarray(weights, dtype=float)
    if not np.all(w > 0):
        raise ValueError("all weights must be positive")
    pi = tuple(sorted(range(w.size), key=lambda i: (-w[i], i)))
    sorted_w = w[list(pi)]
    deltas = np.empty(w.size)
    deltas[:-1] = sorted_w[:-1] - sorted_w[1:]
    deltas[-1] = sorted_w[-1]
    deltas.setflags(write=False)
    return UserOrdering(pi=pi, deltas=deltas)


# ---------------------------------------------------------------------------
# random generation


def _box_muller_pairs(uniforms: np.ndarray) -> np.ndarray:
    """Map an (n, 2) block of uniforms in [0, 1) to n pairs of normals."""
    u1 = uniforms[:, 0]
    u2 = uniforms[:, 1]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    ang = 2.0 * np.pi * u2
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def complex_gaussian(generator: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric complex Gaussians, unit variance, C-order fill."""
    n = int(np.prod(shape)) if np.size(shape) else int(shape)
    u = generator.random((n, 2))
    z = _box_muller_pairs(u)
    out = (z[:, 0] + 1j * z[:, 1]) / math.sqrt(2.0)
    return out.reshape(shape)


def generate_scenario(
    k: int,
    n_t: int,
    n_r: int,
    n_pu: int,
    l_ratios,
    p_u: float,
    p_t,
    seed: int,
    *,
    weights=None,
    sigma2: float = 1.0,
) -> Scenario:
    """Draw a random instance.

    User channel entries are unit-variance CSCG. Each protected-receiver
    vector is a unit-variance CSCG draw scaled by (1/l_ratio)^2, the
    amplitude factor of a distance ratio l2/l1 under a path-loss exponent
    of 4. The draw order is: all user channels (C-order), then the
    protected-receiver vectors in order, so the same seed yields the same
    underlying draws regardless of l_ratios.
    """
    if min(k, n_t, n_r) < 1 or n_pu < 0:
        raise ValueError("dimensions must be positive (n_pu may be zero)")
    l_ratios = np.broadcast_to(np.asarray(l_ratios, dtype=float), (n_pu,))
    if np.any(l_ratios < 1.0):
        raise ValueError("l_ratio must be >= 1")
    p_t = np.broadcast_to(np.asarray(p_t, dtype=float), (n_pu,))
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    channels = complex_gaussian(gen, (k, n_r, n_t))
    pu_channels = np.zeros((n_pu, n_t), dtype=complex)
    for j in range(n_pu):
        pu_channels[j] = (1.0 / l_ratios[j]) ** 2 * complex_gaussian(gen, (n_t,))
    if weights is None:
        weights = np.ones(k)
    return Scenario(
        channels=channels,
        pu_channels=pu_channels,
        weights=weights,
        p_u=p_u,
        p_t=p_t,
        sigma2=sigma2,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# JSON serialization
#
# Schema: {K, N_t, N_r, weights:[...], P_u_dB, pu:[{l_ratio, P_t_dB}...],
#          sigma2, seed, channels?: {su: [K][N_r][N_t][re,im],
#                                    pu: [N][N_t][re,im]}}
# Explicit "channels" entries override seeded generation.


def _complex_to_pairs(a: np.ndarray):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _pairs_to_complex(obj, field: str) -> np.ndarray:
    if isinstance(obj, list) and not obj:
        return np.zeros((0,), dtype=complex)
    arr = np.asarray(obj, dtype=float)
    if arr.ndim < 2 or arr.shape[-1] != 2:
        raise SchemaError(field, "complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def save_scenario(scenario: Scenario, path) -> None:
    """Write a scenario file with explicit channel entries (round-trip exact)."""
    k, n_r, n_t = scenario.channels.shape
    doc = {
        "K": k,
        "N_t": n_t,
        "N_r": n_r,
        "weights": scenario.weights.tolist(),
        "P_u_dB": linear_to_db(scenario.p_u),
        "pu": [
            # l_ratio is provenance only once channels are explicit
            {"l_ratio": 1.0, "P_t_dB": linear_to_db(scenario.p_t[j])}
            for j in range(scenario.n_pu)
        ],
        "sigma2": scenario.sigma2,
        "seed": scenario.seed,
        "channels": {
            "su": _complex_to_pairs(scenario.channels),
            "pu": _complex_to_pairs(scenario.pu_channels),
        },
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=1)
        handle.write("\n")


def _require(doc: dict, field: str):
    if field not in doc:
        raise SchemaError(field, "missing required field")
    return doc[field]


def load_scenario(path) -> Scenario:
    """Read a scenario file; dB power fields are converted to linear."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise SchemaError("<root>", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "top level must be an object")
    k = int(_require(doc, "K"))
    n_t = int(_require(doc, "N_t"))
    n_r = int(_require(doc, "N_r"))
    weights = np.asarray(_require(doc, "weights"), dtype=float)
    if weights.shape != (k,):
        raise SchemaError("weights", f"expected {k} entries")
    p_u = db_to_linear(_require(doc, "P_u_dB"))
    pu_spec = _require(doc, "pu")
    if not isinstance(pu_spec, list):
        raise SchemaError("pu", "must be a list")
    l_ratios = []
    p_t = []
    for j, entry in enumerate(pu_spec):
        if not isinstance(entry, dict):
            raise SchemaError(f"pu[{j}]", "must be an object")
        if "l_ratio" not in entry:
            raise SchemaError(f"pu[{j}].l_ratio", "missing required field")
        if "P_t_dB" not in entry:
            raise SchemaError(f"pu[{j}].P_t_dB", "missing required field")
        l_ratios.append(float(entry["l_ratio"]))
        p_t.append(db_to_linear(entry["P_t_dB"]))
    sigma2 = float(_require(doc, "sigma2"))
    seed = int(_require(doc, "seed"))

    if "channels" in doc:
        spec = doc["channels"]
        if not isinstance(spec, dict) or "su" not in spec or "pu" not in spec:
            raise SchemaError("channels", "must hold 'su' and 'pu' blocks")
        channels = _pairs_to_complex(spec["su"], "channels.su")
        pu_channels = _pairs_to_complex(spec["pu"], "channels.pu")
        if channels.shape != (k, n_r, n_t):
            raise DimensionMismatch(
                f"channels.su shape {channels.shape} != {(k, n_r, n_t)}"
            )
        pu_channels = pu_channels.reshape(-1, n_t) if pu_channels.size else \
            np.zeros((0, n_t), dtype=complex)
        if pu_channels.shape != (len(pu_spec), n_t):
            raise DimensionMismatch(
                f"channels.pu shape {pu_channels.shape} != {(len(pu_spec), n_t)}"
            )
        return Scenario(
            channels=channels,
            pu_channels=pu_channels,
            weights=weights,
            p_u=p_u,
            p_t=np.asarray(p_t),
            sigma2=sigma2,
            seed=seed,
        )
    return generate_scenario(
        k, n_t, n_r, len(pu_spec), np.asarray(l_ratios), p_u, np.asarray(p_t),
        seed, weights=weights, sigma2=sigma2,
    )
