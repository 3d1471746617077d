import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmcanc import compensation as C
from dmcanc import dsp, kernels, plant
from dmcanc.compensation import CompensationSet
from dmcanc.dsp import FirFilter
from dmcanc.errors import DivergenceError

from oracles import ls_compensation


@pytest.fixture(scope="module")
def full_band():
    """Constructed plant whose self paths cover the whole band, so c_true is identifiable."""
    return plant.constructed_plant(2, band=(1.0, 7999.0), seed=0)


@pytest.fixture(scope="module")
def default_plant():
    return plant.synthesize_plant()


def _misalignment_db(c, ref):
    return 10 * np.log10(np.sum((c - ref) ** 2) / np.sum(ref**2))


class TestFit:
    def test_recovers_c_true(self, full_band):
        p, c_true = full_band
        c, rep = C.fit_compensation(p, 0, 1, C.self_path_estimates(p)[0], n_samples=10**6)
        assert _misalignment_db(c.coeffs, c_true[0][1]) <= -30.0
        assert rep.converged and rep.iterations == 10**6
        assert len(rep.error_power_trace) == 1000

    def test_band_limited_constructed_residual(self):
        p, _ = plant.constructed_plant(2, seed=0)
        c, _ = C.fit_compensation(p, 1, 0, C.self_path_estimates(p)[1], n_samples=10**6)
        assert C.compensation_residual(p.path(1, 1), p.path(1, 0), c) <= -30.0

    def test_frozen_adaptation(self, small_plant):
        c, rep = C.fit_compensation(small_plant, 0, 1, C.self_path_estimates(small_plant)[0],
                                    mu_c=0.0, n_samples=5000, L_c=16)
        assert not np.any(c.coeffs)
        assert C.compensation_residual(small_plant.path(0, 0), small_plant.path(0, 1), c) == 0.0
        # error equals the cross-path response to the excitation, block by block
        v = dsp.white_noise(0, 5000, 1.0, small_plant.fs, stream=1000 + 1).samples
        desired = dsp.convolve(v, small_plant.path(0, 1))[:5000]
        ref = 10 * np.log10(np.mean(desired.reshape(5, 1000) ** 2, axis=1))
        np.testing.assert_allclose(rep.error_power_trace, ref, atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_plant_near_least_squares(self, seed):
        # independent long-tail paths: no exact compensation filter exists
        p = plant.synthesize_plant(2, seed=seed, decay=64.0, reflection_gain=1.0, cross_gain=1.0)
        c, _ = C.fit_compensation(p, 0, 1, C.self_path_estimates(p)[0], mu_c=1e-4, n_samples=10**6)
        _, ls_db = ls_compensation(p.path(0, 0), p.path(0, 1), 64)
        assert C.compensation_residual(p.path(0, 0), p.path(0, 1), c) <= ls_db + 3.0

    def test_single_update_is_exact(self, rng):
        K = kernels.get()
        v, desired, vhat = rng.standard_normal((3, 1))
        s_model = rng.standard_normal(5)
        c0 = rng.standard_normal(4)
        c = c0.copy()
        K.fxlms_identify(v, desired, vhat, s_model, c, 0.01, 1, np.zeros(1), 10.0)
        e = desired[0] - s_model[0] * (c0[0] * v[0])
        expected = c0.copy()
        expected[0] = c0[0] + (0.01 * e) * vhat[0]
        np.testing.assert_array_equal(c, expected)

    def test_few_updates_match_hand_loop(self, rng):
        T, Lc, Ls, mu = 40, 4, 6, 0.02
        v, desired, vhat = rng.standard_normal((3, T))
        s_model = rng.standard_normal(Ls)
        c = np.zeros(Lc)
        K = kernels.get()
        K.fxlms_identify(v, desired, vhat, s_model, c, mu, T, np.zeros(1), 1e9)
        ref = np.zeros(Lc)
        u = np.zeros(T)
        for n in range(T):
            vw = np.array([v[n - i] if n >= i else 0.0 for i in range(Lc)])
            hw = np.array([vhat[n - i] if n >= i else 0.0 for i in range(Lc)])
            u[n] = ref @ vw
            e = desired[n] - sum(s_model[i] * u[n - i] for i in range(Ls) if n >= i)
            ref = ref + mu * e * hw
        np.testing.assert_allclose(c, ref, rtol=1e-12, atol=1e-14)

    def test_block_power_trend(self, default_plant):
        for k, m in [(0, 1), (3, 2)]:
            _, rep = C.fit_compensation(default_plant, k, m, C.self_path_estimates(default_plant)[k],
                                        n_samples=200_000)
            lin = 10 ** (rep.error_power_trace[10:] / 10)
            means = 10 * np.log10(lin[: len(lin) // 10 * 10].reshape(-1, 10).mean(axis=1))
            assert np.all(means[1:] <= np.minimum.accumulate(means)[:-1] + 1.0)

    def test_fixed_point(self, full_band):
        p, c_true = full_band
        c, _ = C.fit_compensation(p, 0, 1, C.self_path_estimates(p)[0], n_samples=10**5,
                                  c0=c_true[0][1])
        drift = np.linalg.norm(c.coeffs - c_true[0][1]) / np.linalg.norm(c_true[0][1])
        assert drift <= 1e-3

    def test_same_node_rejected(self, small_plant):
        with pytest.raises(ValueError):
            C.fit_compensation(small_plant, 1, 1, FirFilter([1.0]), n_samples=100)

    def test_divergence_names_step_size(self, small_plant):
        with pytest.raises(DivergenceError, match="mu_c=5.0"):
            C.fit_compensation(small_plant, 0, 1, C.self_path_estimates(small_plant)[0],
                               mu_c=5.0, n_samples=20_000, L_c=16)

    def test_deterministic(self, small_plant):
        est = C.self_path_estimates(small_plant)[2]
        a, _ = C.fit_compensation(small_plant, 2, 0, est, n_samples=20_000, L_c=16, seed=4)
        b, _ = C.fit_compensation(small_plant, 2, 0, est, n_samples=20_000, L_c=16, seed=4)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)


class TestResidual:
    def test_exact_least_squares_on_constructed(self):
        p, _ = plant.constructed_plant(2, seed=5)
        c, _ = ls_compensation(p.path(0, 0)[:256], p.path(0, 1), 64)
        assert C.compensation_residual(p.path(0, 0), p.path(0, 1), c) <= -200.0

    def test_zero_filter_is_zero_db(self, rng):
        assert C.compensation_residual(rng.standard_normal(8), rng.standard_normal(12),
                                       np.zeros(4)) == 0.0

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            C.compensation_residual([1.0, 0.5], np.zeros(4), [1.0])

    @given(st.integers(0, 2**31 - 1))
    def test_least_squares_is_lower_bound(self, seed):
        r = np.random.default_rng(seed)
        s_kk, s_km = r.standard_normal(12), r.standard_normal(16)
        _, ls_db = ls_compensation(s_kk, s_km, 5)
        assert C.compensation_residual(s_kk, s_km, r.standard_normal(5)) >= ls_db - 1e-9

    def test_padding_either_way(self):
        # model longer than target and target longer than model
        assert C.compensation_residual([1.0], [1.0, 0.0, 0.0], [1.0]) == -np.inf
        assert C.compensation_residual([1.0, 1.0], [1.0], [1.0]) == pytest.approx(0.0)


class TestFitAll:
    def test_count_and_quality(self, small_plant, small_cfg):
        reports = {}
        sets = C.fit_all(small_plant, None, small_cfg.mu_c, small_cfg.comp_samples,
                         small_cfg.L_c, reports=reports)
        assert [s.owner for s in sets] == [0, 1, 2]
        assert sum(len(s.filters) for s in sets) == 6
        assert all(s.owner not in s.filters for s in sets)
        assert all(r <= -20.0 for s in sets for r in s.residual_db.values())
        assert set(reports) == {(k, m) for k in range(3) for m in range(3) if k != m}

    def test_four_nodes_twelve_filters(self):
        p = plant.synthesize_plant(4, 32, 40, 40, (100, 3000), 8000, cross_delay=(1, 4),
                                   primary_delay=(2, 6))
        sets = C.fit_all(p, None, 1e-3, 2000, 8)
        assert sum(len(s.filters) for s in sets) == 12

    def test_single_node_empty(self):
        p = plant.synthesize_plant(1, 32, 40, 40, (100, 3000), 8000, primary_delay=(2, 6))
        sets = C.fit_all(p, None, 1e-3, 1000, 8)
        assert len(sets) == 1 and sets[0].filters == {}

    def test_error_carries_pair(self, small_plant):
        with pytest.raises(DivergenceError, match=r"pair \(k=0, m=1\)"):
            C.fit_all(small_plant, None, 5.0, 20_000, 16)

    def test_save_load(self, tmp_path, small_plant):
        sets = C.fit_all(small_plant, None, 1e-3, 5000, 16)
        C.save_sets(sets, tmp_path)
        assert (tmp_path / "comp_2_3.txt").exists() and not (tmp_path / "comp_2_2.txt").exists()
        back = C.load_sets(tmp_path)
        for a, b in zip(sets, back):
            assert a.filters.keys() == b.filters.keys()
            for m in a.filters:
                np.testing.assert_array_equal(a.coeffs(m), b.coeffs(m))
                assert b.residual_db[m] == pytest.approx(a.residual_db[m], abs=1e-6)


class TestSetInvariants:
    def test_no_self_entry(self):
        with pytest.raises(ValueError):
            CompensationSet(1, {1: FirFilter([1.0])})

    def test_uniform_length(self):
        with pytest.raises(ValueError):
            CompensationSet(0, {1: FirFilter([1.0]), 2: FirFilter([1.0, 2.0])})


def test_estimate_perturbation_level(small_plant):
    est = C.self_path_estimates(small_plant, error_db=-20.0, seed=1)
    for k, f in enumerate(est):
        h = small_plant.path(k, k)
        err = 10 * np.log10(np.sum((f.coeffs - h) ** 2) / np.sum(h**2))
        assert err == pytest.approx(-20.0, abs=1e-9)
    exact = C.self_path_estimates(small_plant)
    np.testing.assert_array_equal(exact[0].coeffs, small_plant.path(0, 0))
