import json

import numpy as np
import pytest

from crmimo.scenario import (
    DimensionMismatch,
    Scenario,
    SchemaError,
    db_to_linear,
    generate_scenario,
    linear_to_db,
    load_scenario,
    order_users,
    save_scenario,
)


class TestGeneration:
    def test_deterministic(self):
        a = generate_scenario(1, 2, 2, 0, (), 10.0, (), seed=7)
        b = generate_scenario(1, 2, 2, 0, (), 10.0, (), seed=7)
        assert np.array_equal(a.channels, b.channels)

    def test_seed_changes_draw(self):
        a = generate_scenario(1, 2, 2, 0, (), 10.0, (), seed=7)
        b = generate_scenario(1, 2, 2, 0, (), 10.0, (), seed=8)
        assert not np.array_equal(a.channels, b.channels)

    def test_channel_moments(self):
        # E|h|^2 = 1 per entry, E||h_o||^2 = N_t at unit distance ratio
        n_t = 3
        norms = []
        entry_sq = []
        for seed in range(10_000):
            sc = generate_scenario(1, n_t, 1, 1, 1.0, 1.0, 1.0, seed)
            norms.append(np.sum(np.abs(sc.pu_channels[0]) ** 2))
            entry_sq.append(np.mean(np.abs(sc.channels) ** 2))
        assert np.mean(norms) == pytest.approx(n_t, rel=0.05)
        assert np.mean(entry_sq) == pytest.approx(1.0, rel=0.05)

    def test_l_ratio_is_pure_scaling(self):
        near = generate_scenario(1, 3, 1, 1, 1.0, 1.0, 1.0, seed=5)
        far = generate_scenario(1, 3, 1, 1, 2.0, 1.0, 1.0, seed=5)
        assert np.array_equal(near.channels, far.channels)
        assert np.allclose(far.pu_channels, 0.25 * near.pu_channels, rtol=0, atol=0)

    def test_l_ratio_below_one_rejected(self):
        with pytest.raises(ValueError):
            generate_scenario(1, 2, 2, 1, 0.5, 1.0, 1.0, seed=1)

    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario(channels=np.ones((1, 2, 2), dtype=complex),
                     pu_channels=np.zeros((0, 2)), weights=np.array([-1.0]),
                     p_u=1.0, p_t=np.zeros(0))
        with pytest.raises(DimensionMismatch):
            Scenario(channels=np.ones((1, 2, 2), dtype=complex),
                     pu_channels=np.ones((1, 3)), weights=np.array([1.0]),
                     p_u=1.0, p_t=np.array([1.0]))

    def test_immutable_arrays(self):
        sc = generate_scenario(1, 2, 2, 0, (), 10.0, (), seed=1)
        with pytest.raises(ValueError):
            sc.channels[0, 0, 0] = 0


class TestOrdering:
    def test_equal_weights_stable(self):
        o = order_users([1.0, 1.0, 1.0])
        assert o.pi == (0, 1, 2)
        assert np.allclose(o.deltas, [0.0, 0.0, 1.0])

    def test_study_weights(self):
        o = order_users([5.0, 1.0, 1.0, 1.0, 1.0])
        assert o.pi == (0, 1, 2, 3, 4)
        assert np.allclose(o.deltas, [4.0, 0.0, 0.0, 0.0, 1.0])

    def test_sorting(self):
        o = order_users([1.0, 3.0, 2.0])
        assert o.pi == (1, 2, 0)
        assert np.allclose(o.deltas, [1.0, 1.0, 1.0])

    def test_permutation_and_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = rng.uniform(0.1, 5.0, size=rng.integers(1, 8))
            o = order_users(w)
            assert sorted(o.pi) == list(range(w.size))
            sorted_w = w[list(o.pi)]
            assert np.all(np.diff(sorted_w) <= 0)
            assert o.deltas.sum() == pytest.approx(sorted_w[0])
            assert np.all(o.deltas >= 0)

    def test_inverse(self):
        o = order_users([1.0, 3.0, 2.0])
        for pos, user in enumerate(o.pi):
            assert o.inverse[user] == pos


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        sc = generate_scenario(2, 3, 2, 2, (1.0, 2.0), db_to_linear(13.0),
                               (1.0, 0.5), seed=42, weights=(2.0, 1.0),
                               sigma2=1.0)
        path = tmp_path / "scn.json"
        save_scenario(sc, path)
        back = load_scenario(path)
        assert np.array_equal(back.channels, sc.channels)
        assert np.array_equal(back.pu_channels, sc.pu_channels)
        assert np.array_equal(back.weights, sc.weights)
        assert back.p_u == sc.p_u
        assert np.array_equal(back.p_t, sc.p_t)
        assert back.sigma2 == sc.sigma2 and back.seed == sc.seed

    def test_missing_field(self, tmp_path):
        doc = {"K": 1, "N_t": 2, "N_r": 2, "weights": [1.0],
               "pu": [], "sigma2": 1.0, "seed": 0}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            load_scenario(path)
        assert "P_u_dB" in str(err.value)

    def test_missing_pu_field(self, tmp_path):
        doc = {"K": 1, "N_t": 2, "N_r": 2, "weights": [1.0], "P_u_dB": 0.0,
               "pu": [{"l_ratio": 1.0}], "sigma2": 1.0, "seed": 0}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            load_scenario(path)
        assert "pu[0].P_t_dB" in str(err.value)

    def test_db_conversion_on_load(self, tmp_path):
        doc = {"K": 1, "N_t": 2, "N_r": 1, "weights": [1.0], "P_u_dB": 10.0,
               "pu": [{"l_ratio": 1.0, "P_t_dB": 0.0}], "sigma2": 1.0,
               "seed": 3}
        path = tmp_path / "scn.json"
        path.write_text(json.dumps(doc))
        sc = load_scenario(path)
        assert sc.p_u == pytest.approx(10.0)
        assert sc.p_t[0] == 1.0

    def test_explicit_channels_override(self, tmp_path):
        sc = generate_scenario(1, 2, 1, 0, (), 1.0, (), seed=9)
        path = tmp_path / "scn.json"
        save_scenario(sc, path)
        doc = json.loads(path.read_text())
        doc["channels"]["su"] = [[[[1.0, 0.0], [0.0, 0.0]]]]
        path.write_text(json.dumps(doc))
        back = load_scenario(path)
        assert back.channels[0, 0, 0] == 1.0 + 0.0j
        assert back.channels[0, 0, 1] == 0.0 + 0.0j

    def test_channel_dim_mismatch(self, tmp_path):
        sc = generate_scenario(1, 2, 1, 0, (), 1.0, (), seed=9)
        path = tmp_path / "scn.json"
        save_scenario(sc, path)
        doc = json.loads(path.read_text())
        doc["channels"]["su"] = [[[[1.0, 0.0]]]]
        path.write_text(json.dumps(doc))
        with pytest.raises(DimensionMismatch):
            load_scenario(path)


def test_db_round_trip():
    for x in (1.0, 10.0, db_to_linear(13.0), 19.952623149688797, 3.1622776601683795):
        assert db_to_linear(linear_to_db(x)) == x
