import numpy as np
import pytest

from crmimo.linalg import NotPositiveDefinite
from crmimo.mac import (
    AllZeroAuxiliaries,
    DipaOptions,
    dipa,
    inner_ascent,
    mac_gradient,
    mac_power,
    noise_shape,
    per_user_rates_mac,
    subgradient_of_dual,
    waterfill_single_user,
    weighted_sum_rate_mac,
)
from crmimo.scenario import Scenario, generate_scenario, order_users

from conftest import random_psd


def scalar_scenario(h=(1.0, 0.5), w=(2.0, 1.0), p_u=10.0, h_o=(), p_t=(),
                    sigma2=1.0):
    channels = np.array([[[complex(x)]] for x in h])
    n_pu = len(h_o)
    pu = np.array([[complex(x)] for x in h_o]) if n_pu else np.zeros((0, 1))
    return Scenario(channels=channels, pu_channels=pu,
                    weights=np.array(w, dtype=float), p_u=p_u,
                    p_t=np.array(p_t, dtype=float), sigma2=sigma2)


TIGHT = DipaOptions(eps_power_rel=1e-7, grad_tol=1e-12)


class TestNoiseShape:
    def test_sum_power_reduction(self):
        sc = generate_scenario(1, 3, 2, 1, 1.0, 10.0, 2.0, seed=1)
        ns = noise_shape(sc, [0.0], 1.0)
        assert np.allclose(ns.r_w, np.eye(3))
        assert ns.budget == pytest.approx(10.0)

    def test_rank_one(self):
        sc = scalar_scenario(h=(1.0,), w=(1.0,), p_u=5.0, h_o=(1.0,), p_t=(2.0,))
        ns = noise_shape(sc, [1.0], 0.0)
        assert ns.r_w[0, 0] == pytest.approx(1.0)
        assert ns.budget == pytest.approx(2.0)

    def test_linearity(self):
        sc = generate_scenario(1, 3, 2, 1, 1.0, 10.0, 2.0, seed=1)
        h = sc.pu_channels[0][:, None]
        ns = noise_shape(sc, [2.0], 3.0)
        assert np.allclose(ns.r_w, 2.0 * (h @ h.conj().T) + 3.0 * np.eye(3))
        assert ns.budget == pytest.approx(2.0 * 2.0 + 3.0 * 10.0)

    def test_all_zero(self):
        sc = generate_scenario(1, 3, 2, 1, 1.0, 10.0, 2.0, seed=1)
        with pytest.raises(AllZeroAuxiliaries):
            noise_shape(sc, [0.0], 0.0)


class TestRates:
    def test_zero_covariances_zero_rate(self):
        sc = generate_scenario(3, 3, 2, 1, 1.0, 10.0, 1.0, seed=2,
                               weights=(3.0, 2.0, 1.0))
        o = order_users(sc.weights)
        ns = noise_shape(sc, [0.7], 1.3)
        q = np.zeros((3, 2, 2), dtype=complex)
        assert weighted_sum_rate_mac(sc, o, q, ns) == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(per_user_rates_mac(sc, o, q, ns), 0.0)

    def test_identity_channel(self):
        n = 3
        sc = Scenario(channels=np.eye(n, dtype=complex)[None, :, :],
                      pu_channels=np.zeros((0, n)), weights=np.array([1.0]),
                      p_u=10.0, p_t=np.zeros(0))
        o = order_users(sc.weights)
        q = np.eye(n, dtype=complex)[None, :, :]
        f = weighted_sum_rate_mac(sc, o, q, np.eye(n, dtype=complex))
        assert f == pytest.approx(n * np.log(2.0), rel=1e-9)

    def test_scalar_formula_oracle(self):
        sc = scalar_scenario(h=(1.0, 0.5), w=(2.0, 1.0))
        o = order_users(sc.weights)
        q = np.array([[[3.0 + 0j]], [[4.0 + 0j]]])
        f = weighted_sum_rate_mac(sc, o, q, np.eye(1, dtype=complex))
        expected = np.log(1 + 3.0) + np.log(1 + 3.0 + 0.25 * 4.0)
        # the 1e-9 trace-relative noise ridge shifts the log-dets by ~1.5e-9
        assert f == pytest.approx(expected, abs=5e-9)

    def test_weighted_sum_consistency(self, rng):
        sc = generate_scenario(3, 4, 2, 1, 1.0, 10.0, 1.0, seed=5,
                               weights=(2.5, 1.5, 1.0))
        o = order_users(sc.weights)
        ns = noise_shape(sc, [0.4], 0.9)
        q = np.stack([random_psd(rng, 2) for _ in range(3)])
        rates = per_user_rates_mac(sc, o, q, ns)
        assert np.all(rates >= 0)
        assert float(sc.weights @ rates) == pytest.approx(
            weighted_sum_rate_mac(sc, o, q, ns), abs=1e-9)

    def test_equal_weights_order_invariant(self, rng):
        sc = generate_scenario(3, 4, 2, 0, (), 10.0, (), seed=6)
        q = np.stack([random_psd(rng, 2) for _ in range(3)])
        o = order_users(sc.weights)
        f1 = weighted_sum_rate_mac(sc, o, q, np.eye(4, dtype=complex))
        # swap two users (channels and covariances together)
        perm = [1, 0, 2]
        sc2 = Scenario(channels=sc.channels[perm], pu_channels=sc.pu_channels,
                       weights=sc.weights, p_u=sc.p_u, p_t=sc.p_t)
        f2 = weighted_sum_rate_mac(sc2, o, q[perm], np.eye(4, dtype=complex))
        assert f1 == pytest.approx(f2, abs=1e-9)

    def test_singular_noise_rejected(self):
        sc = scalar_scenario(h=(1.0,), w=(1.0,))
        o = order_users(sc.weights)
        with pytest.raises(NotPositiveDefinite):
            weighted_sum_rate_mac(sc, o, np.zeros((1, 1, 1)), np.zeros((1, 1)))


class TestGradient:
    def test_single_user_closed_form(self, rng):
        sc = generate_scenario(1, 3, 2, 0, (), 10.0, (), seed=9)
        o = order_users(sc.weights)
        q = np.stack([random_psd(rng, 2)])
        r_w = np.eye(3, dtype=complex)
        g = mac_gradient(sc, o, q, r_w, 0)
        h = sc.channels[0]
        f = r_w + h.conj().T @ q[0] @ h
        # tiny ridge is part of the evaluation convention
        f += 1e-9 * np.trace(r_w).real / 3 * np.eye(3)
        expected = h @ np.linalg.inv(f) @ h.conj().T
        assert np.allclose(g, expected, atol=1e-9)

    def test_finite_differences(self):
        rng = np.random.default_rng(12)
        worst = 0.0
        for seed in range(20):
            k = int(rng.integers(1, 4))
            sc = generate_scenario(k, 3, 2, 1, 1.0, 10.0, 1.0, seed=seed,
                                   weights=rng.uniform(0.5, 3.0, size=k))
            o = order_users(sc.weights)
            ns = noise_shape(sc, [float(rng.uniform(0.1, 1))],
                             float(rng.uniform(0.3, 1.5)))
            q = np.stack([random_psd(rng, 2, 0.5) for _ in range(k)])
            user = int(rng.integers(0, k))
            g = mac_gradient(sc, o, q, ns, user)
            e = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            e = 0.5 * (e + e.conj().T)
            eps = 1e-6
            qp, qm = q.copy(), q.copy()
            qp[user] = q[user] + eps * e
            qm[user] = q[user] - eps * e
            fd = (weighted_sum_rate_mac(sc, o, qp, ns)
                  - weighted_sum_rate_mac(sc, o, qm, ns)) / (2 * eps)
            an = float(np.trace(g @ e).real)
            worst = max(worst, abs(fd - an) / max(abs(fd), 1e-12))
        assert worst <= 1e-5

    def test_weight_scaling_linearity(self, rng):
        sc = generate_scenario(2, 3, 2, 0, (), 10.0, (), seed=3,
                               weights=(2.0, 1.0))
        o = order_users(sc.weights)
        q = np.stack([random_psd(rng, 2) for _ in range(2)])
        r_w = np.eye(3, dtype=complex)
        g1 = mac_gradient(sc, o, q, r_w, 0)
        sc3 = sc.with_weights((6.0, 3.0))
        g3 = mac_gradient(sc3, order_users(sc3.weights), q, r_w, 0)
        assert np.allclose(g3, 3.0 * g1, rtol=1e-12)


class TestInnerAscent:
    def test_huge_level_kills_power(self):
        sc = generate_scenario(2, 3, 2, 0, (), 10.0, (), seed=4)
        o = order_users(sc.weights)
        r_w = np.eye(3, dtype=complex)
        lam = 1.0
        for h in sc.channels:
            lam = max(lam, float(np.linalg.eigvalsh(h @ h.conj().T)[-1]))
        res = inner_ascent(sc, o, r_w, lam + 1.0,
                           np.stack([np.eye(2, dtype=complex)] * 2))
        assert res.converged
        assert mac_power(res.covariances) <= 1e-8

    def test_zero_level_flagged_unbounded(self):
        sc = generate_scenario(1, 2, 2, 0, (), 10.0, (), seed=4)
        o = order_users(sc.weights)
        res = inner_ascent(sc, o, np.eye(2, dtype=complex), 0.0, None,
                           max_iter=60)
        assert not res.converged

    def test_scalar_grid_oracle(self):
        sc = scalar_scenario(h=(1.0, 0.5), w=(2.0, 1.0))
        o = order_users(sc.weights)
        lam = 0.3
        res = inner_ascent(sc, o, np.eye(1, dtype=complex), lam, None,
                           tol=1e-12)
        got = np.array([res.covariances[0, 0, 0].real,
                        res.covariances[1, 0, 0].real])
        # grid over q1 with the exact conditional optimum for q2
        grid = np.arange(0.0, 12.0, 1e-3)
        best = (-np.inf, None)
        for q1 in grid:
            q2 = max(0.0, (0.25 / lam - (1 + q1)) / 0.25)
            val = (np.log1p(q1) + np.log(1 + q1 + 0.25 * q2)
                   - lam * (q1 + q2))
            if val > best[0]:
                best = (val, (q1, q2))
        assert np.allclose(got, best[1], atol=1e-3)
        assert res.lagrangian >= best[0] - 1e-6

    def test_monotone_lagrangian(self):
        # the inner loop enforces nondecreasing accepted iterates; verify by
        # instrumenting successive restarts
        sc = generate_scenario(2, 3, 2, 0, (), 10.0, (), seed=8,
                               weights=(2.0, 1.0))
        o = order_users(sc.weights)
        r_w = np.eye(3, dtype=complex)
        prev = None
        q = None
        for sweeps in range(1, 12):
            res = inner_ascent(sc, o, r_w, 0.4, q, max_iter=1, tol=1e-16)
            q = res.covariances
            if prev is not None:
                assert res.lagrangian >= prev - 1e-12
            prev = res.lagrangian


class TestDipa:
    def test_scalar_grid_oracle(self):
        sc = scalar_scenario(h=(1.0, 0.6), w=(2.0, 1.0), p_u=10.0)
        res = dipa(sc, np.zeros(0), 1.0, options=TIGHT)
        # budget binds at the optimum; grid the boundary
        q1 = np.arange(0.0, 10.0 + 1e-9, 1e-3)
        q2 = 10.0 - q1
        vals = np.log1p(q1) + np.log(1 + q1 + 0.36 * q2)
        assert res.objective == pytest.approx(float(vals.max()), abs=1e-3)
        assert res.converged

    def test_vanishing_budget(self):
        sc = scalar_scenario(h=(1.0, 0.6), w=(2.0, 1.0), p_u=1e-9)
        res = dipa(sc, np.zeros(0), 1.0)
        assert res.objective <= 1e-8
        assert mac_power(res.covariances) <= 2e-9

    def test_budget_invariant_and_consistency(self):
        for seed in range(5):
            sc = generate_scenario(3, 4, 2, 1, 1.0, 10.0, 1.0, seed=seed,
                                   weights=(2.0, 1.5, 1.0))
            o = order_users(sc.weights)
            res = dipa(sc, [0.5], 0.8, ordering=o)
            assert res.power <= res.noise.budget * (1 + 1e-6)
            assert res.objective == pytest.approx(
                weighted_sum_rate_mac(sc, o, res.covariances, res.noise),
                abs=1e-10)
            mins = [np.linalg.eigvalsh(c).min() for c in res.covariances]
            assert min(mins) >= -1e-9

    def test_weight_scaling_invariance(self):
        sc = generate_scenario(2, 3, 2, 1, 1.0, 10.0, 1.0, seed=13,
                               weights=(2.0, 1.0))
        base = dipa(sc, [0.5], 1.0, options=TIGHT).objective
        for c in (0.5, 3.0):
            scaled = dipa(sc.with_weights(sc.weights * c), [0.5], 1.0,
                          options=TIGHT).objective
            assert scaled / c == pytest.approx(base, rel=1e-6)

    def test_power_nonincreasing_in_level(self):
        sc = generate_scenario(2, 3, 2, 0, (), 10.0, (), seed=10,
                               weights=(2.0, 1.0))
        o = order_users(sc.weights)
        r_w = np.eye(3, dtype=complex)
        powers = []
        for lam in np.geomspace(0.05, 3.0, 10):
            res = inner_ascent(sc, o, r_w, float(lam), None, tol=1e-12)
            powers.append(mac_power(res.covariances))
        assert np.all(np.diff(powers) <= 1e-6)

    def test_concavity_probe(self, rng):
        sc = generate_scenario(2, 3, 2, 0, (), 10.0, (), seed=2,
                               weights=(2.0, 1.0))
        o = order_users(sc.weights)
        r_w = np.eye(3, dtype=complex)
        for _ in range(20):
            qa = np.stack([random_psd(rng, 2) for _ in range(2)])
            qb = np.stack([random_psd(rng, 2) for _ in range(2)])
            fa = weighted_sum_rate_mac(sc, o, qa, r_w)
            fb = weighted_sum_rate_mac(sc, o, qb, r_w)
            fm = weighted_sum_rate_mac(sc, o, 0.5 * (qa + qb), r_w)
            assert fm >= 0.5 * (fa + fb) - 1e-9

    def test_water_level_subgradient(self):
        sc = generate_scenario(2, 3, 2, 1, 1.0, 10.0, 1.0, seed=5,
                               weights=(2.0, 1.0))
        o = order_users(sc.weights)
        ns = noise_shape(sc, [0.5], 1.0)
        levels = [0.05, 0.1, 0.2, 0.4, 0.8]
        evals = {}
        for lam in levels:
            res = inner_ascent(sc, o, ns, lam, None, tol=1e-14)
            g = res.lagrangian + lam * ns.budget
            s = subgradient_of_dual(res.covariances, ns.budget, sc.sigma2)
            evals[lam] = (g, s)
        for la, (ga, sa) in evals.items():
            for lb, (gb, _) in evals.items():
                if la != lb:
                    assert gb >= ga + sa * (lb - la) - 1e-7

    def test_subgradient_values(self):
        assert subgradient_of_dual(np.zeros((2, 1, 1)), 5.0) == 5.0
        q = np.stack([np.eye(2, dtype=complex)] * 2)
        assert subgradient_of_dual(q, 4.0) == pytest.approx(0.0)


class TestWaterfill:
    def test_scalar_channel(self):
        q, rate = waterfill_single_user(np.array([[1.0]]), 3.0)
        assert q[0, 0] == pytest.approx(3.0)
        assert rate == pytest.approx(np.log(4.0))

    def test_symmetric_modes(self):
        q, rate = waterfill_single_user(np.diag([1.0, 1.0]), 2.0)
        assert np.allclose(np.diag(q).real, [1.0, 1.0])
        assert rate == pytest.approx(2 * np.log(2.0))

    def test_grid_checked_two_modes(self):
        # H = diag(2, 1), P = 1: the water level 1.125 covers both modes;
        # frozen from the 1-D grid oracle below
        q, rate = waterfill_single_user(np.diag([2.0, 1.0]), 1.0)
        p1 = np.arange(0.0, 1.0 + 1e-12, 1e-4)
        vals = np.log1p(4.0 * p1) + np.log1p(1.0 - p1)
        assert rate == pytest.approx(float(vals.max()), abs=1e-7)
        assert rate == pytest.approx(np.log(4.5) + np.log(1.125), rel=1e-12)
        assert np.allclose(sorted(np.diag(q).real), [0.125, 0.875], atol=1e-12)

    def test_zero_power(self):
        q, rate = waterfill_single_user(np.diag([2.0, 1.0]), 0.0)
        assert rate == 0.0 and np.allclose(q, 0.0)

    def test_matches_dipa_on_random_channels(self):
        for seed in range(5):
            sc = generate_scenario(1, 4, 4, 0, (), 10.0, (), seed=seed)
            res = dipa(sc, np.zeros(0), 1.0)
            _, wf = waterfill_single_user(sc.channels[0], sc.p_u, sc.sigma2)
            assert res.objective == pytest.approx(wf, abs=1e-4)
