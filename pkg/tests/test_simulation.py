import math

import numpy as np
import pytest

from cbpsdid.simulation import (
    DgpConfig,
    StandardizationConstants,
    compute_standardization,
    default_constants,
    draw_replication,
    efficiency_bound_detail,
    f_or,
    f_ps,
    raw_covariates,
    run_study,
)


def stream(seed, r=0):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, r)))


class TestStandardization:
    def test_first_transform_matches_lognormal_moments(self):
        # exp(0.5 X) with X standard normal is lognormal(0, 0.25):
        # mean e^{1/8}, variance e^{1/4}(e^{1/4} - 1)
        consts = compute_standardization(10**6, seed=123)
        mean_oracle = math.exp(0.125)
        var_oracle = math.exp(0.25) * (math.exp(0.25) - 1.0)
        assert consts.mean[0] == pytest.approx(mean_oracle, rel=5e-3)
        assert consts.sd[0] ** 2 == pytest.approx(var_oracle, rel=5e-3)

    def test_fourth_transform_matches_normal_moment_expansion(self):
        # (20 + S)^2 with S ~ N(0, 2): mean 400 + 2 = 402,
        # var E[(20+S)^4] - 402^2 = 160000 + 6*400*2 + 3*4 - 402^2 = 3208
        consts = compute_standardization(10**6, seed=321)
        assert consts.mean[3] == pytest.approx(402.0, rel=5e-3)
        assert consts.sd[3] ** 2 == pytest.approx(3208.0, rel=2e-2)

    def test_doubling_draws_stays_within_mc_error(self):
        a = compute_standardization(10**6, seed=50)
        b = compute_standardization(2 * 10**6, seed=51)
        rng = np.random.default_rng(999)
        sample = raw_covariates(rng.standard_normal((10**6, 4)))
        for j in range(4):
            se_mean = sample[:, j].std() / 1000.0
            assert abs(a.mean[j] - b.mean[j]) < 3 * se_mean * np.sqrt(2)
            # sd comparison via the delta method on the sample variance
            s2 = sample[:, j].var()
            mu4 = np.mean((sample[:, j] - sample[:, j].mean()) ** 4)
            se_sd = math.sqrt(max(mu4 - s2**2, 0.0) / 10**6) / (2 * math.sqrt(s2))
            assert abs(a.sd[j] - b.sd[j]) < 3 * se_sd * np.sqrt(2)

    def test_bundled_constants_reproducible_from_recorded_seed(self):
        bundled = default_constants()
        recomputed = compute_standardization(bundled.draws, seed=bundled.seed)
        np.testing.assert_allclose(recomputed.mean, bundled.mean, rtol=1e-6)
        np.testing.assert_allclose(recomputed.sd, bundled.sd, rtol=1e-6)

    def test_save_load_roundtrip(self, tmp_path):
        consts = compute_standardization(10**6, seed=77)
        path = tmp_path / "consts.json"
        consts.save(path)
        back = StandardizationConstants.load(path)
        np.testing.assert_array_equal(back.mean, consts.mean)
        np.testing.assert_array_equal(back.sd, consts.sd)
        assert back.seed == 77 and back.draws == 10**6

    def test_minimum_draws_enforced(self):
        with pytest.raises(ValueError):
            compute_standardization(10**5, seed=1)


class TestSignals:
    def test_values_at_origin(self):
        origin = np.zeros((1, 4))
        assert f_or(origin)[0] == pytest.approx(210.0)
        assert f_ps(origin)[0] == pytest.approx(0.0)
        # propensity at the origin is one half
        assert 1.0 / (1.0 + math.exp(-f_ps(origin)[0])) == pytest.approx(0.5)

    def test_coefficients(self):
        w = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
        np.testing.assert_allclose(f_or(w) - 210.0, [27.4, 13.7, 13.7, 13.7])
        np.testing.assert_allclose(f_ps(w), [-0.75, 0.375, -0.1875, -0.075])


class TestDrawReplication:
    def test_dgp5_reduces_to_dgp1_at_zero_perturbation(self):
        consts = default_constants()
        rep1 = draw_replication(DgpConfig(1, 400), consts, stream(11))
        rep5 = draw_replication(DgpConfig(5, 400, xi=0.0, delta=0.0), consts, stream(11))
        np.testing.assert_array_equal(rep1.dataset.y0, rep5.dataset.y0)
        np.testing.assert_array_equal(rep1.dataset.y1, rep5.dataset.y1)
        np.testing.assert_array_equal(rep1.dataset.d, rep5.dataset.d)
        for name in rep1.dataset.covariates:
            np.testing.assert_array_equal(
                rep1.dataset.covariates[name], rep5.dataset.covariates[name]
            )

    def test_control_trend_equals_or_signal_under_dgp1(self):
        # m(Z) = E[dy | Z, control] is the OR signal: the group difference
        # of dy and the signal vanishes at the MC rate
        consts = default_constants()
        rep = draw_replication(DgpConfig(1, 10**5), consts, stream(13))
        ds = rep.dataset
        ctrl = ds.d == 0
        diff = ds.dy[ctrl] - rep.oracle_m[ctrl]
        se = diff.std() / math.sqrt(ctrl.sum())
        assert abs(diff.mean()) < 3 * se

    def test_standardized_covariates_have_unit_moments(self):
        consts = default_constants()
        rep = draw_replication(DgpConfig(1, 10**5), consts, stream(17))
        for name, col in rep.dataset.covariates.items():
            assert abs(col.mean()) < 0.05
            assert abs(col.var() - 1.0) < 0.1

    def test_treated_fraction_has_overlap(self):
        consts = default_constants()
        for dgp in (1, 2, 3, 4, 5):
            fractions = [
                draw_replication(DgpConfig(dgp, 1000), consts, stream(19, r)).dataset.d.mean()
                for r in range(3)
            ]
            assert 0.05 < np.mean(fractions) < 0.95

    def test_oracle_pi_strictly_inside_unit_interval(self):
        consts = default_constants()
        for dgp in (1, 4, 5):
            rep = draw_replication(DgpConfig(dgp, 2000), consts, stream(23))
            assert np.all(rep.oracle_pi > 0) and np.all(rep.oracle_pi < 1)

    def test_dgp5_clamp_is_counted(self):
        consts = default_constants()
        # a huge xi pushes pi * exp(xi u) above one for many units
        rep = draw_replication(DgpConfig(5, 2000, xi=2.0, delta=0.0), consts, stream(29))
        assert rep.n_pi_clamped > 0
        assert np.all(rep.oracle_pi <= 1.0 - 1e-6)

    def test_dgp5_outcome_shift_uses_delta_and_double_delta(self):
        consts = default_constants()
        base = draw_replication(DgpConfig(5, 500, xi=0.0, delta=0.0), consts, stream(31))
        shifted = draw_replication(DgpConfig(5, 500, xi=0.0, delta=0.1), consts, stream(31))
        from cbpsdid.simulation import r_direction

        z = np.column_stack([shifted.dataset.covariates[f"Z{j}"] for j in (1, 2, 3, 4)])
        r_vals = r_direction(z)
        np.testing.assert_allclose(shifted.dataset.y0 - base.dataset.y0, 0.1 * r_vals,
                                   rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(shifted.dataset.y1 - base.dataset.y1, 0.2 * r_vals,
                                   rtol=1e-10, atol=1e-10)


class TestDgpConfig:
    def test_dgp5_defaults_to_root_n(self):
        cfg = DgpConfig(5, 400)
        assert cfg.xi == pytest.approx(0.05)
        assert cfg.delta == pytest.approx(0.05)

    def test_other_dgps_reject_perturbations(self):
        with pytest.raises(ValueError):
            DgpConfig(1, 100, xi=0.1)

    def test_bad_id(self):
        with pytest.raises(ValueError):
            DgpConfig(6, 100)


class TestRunStudy:
    def test_single_replication_degenerates(self):
        report = run_study(DgpConfig(1, 300), reps=1, seed=5, bound_draws=10**5)
        for row in report.rows:
            assert row.rmse == pytest.approx(abs(row.av_bias))
            assert row.cover in (0.0, 1.0)
            assert row.cil > 0

    def test_thread_count_does_not_change_results(self):
        serial = run_study(DgpConfig(1, 200), reps=10, seed=42, bound_draws=10**5)
        parallel = run_study(DgpConfig(1, 200), reps=10, seed=42, threads=2,
                             bound_draws=10**5)
        assert serial == parallel

    def test_metric_invariants(self):
        report = run_study(DgpConfig(2, 200), reps=25, seed=6, bound_draws=10**5)
        for row in report.rows:
            assert row.rmse >= abs(row.av_bias) - 1e-12
            assert 0.0 <= row.cover <= 1.0
            assert row.cil > 0
            assert row.n_used + row.n_failed == 25

    def test_failures_are_counted_and_excluded(self):
        # n = 8 with five design columns: separation and control shortages
        # are common, and must be recorded rather than fatal
        report = run_study(DgpConfig(1, 8), reps=40, seed=3, bound_draws=10**5)
        total_failures = sum(row.n_failed for row in report.rows)
        assert total_failures > 0
        for row in report.rows:
            assert row.n_used + row.n_failed == 40


class TestEfficiencyBound:
    def test_oracle_influence_mean_vanishes_at_mc_rate(self):
        # with true nuisances and tau = 0 the influence values average to
        # zero up to MC noise
        from cbpsdid import efficient_influence

        consts = default_constants()
        rep = draw_replication(DgpConfig(1, 10**5), consts, stream(41))
        ds = rep.dataset
        eta = efficient_influence(rep.oracle_pi, rep.oracle_m, ds.dy, ds.d,
                                  tau=0.0, p=float(ds.d.mean()))
        se = eta.std() / math.sqrt(eta.size)
        assert abs(eta.mean()) < 3 * se

    def test_compute_standardization_cache_file(self, tmp_path):
        path = tmp_path / "cached.json"
        consts = compute_standardization(10**6, seed=63, cache_path=path)
        back = StandardizationConstants.load(path)
        np.testing.assert_array_equal(back.mean, consts.mean)
        assert back.seed == 63

    def test_doubling_draws_is_consistent(self):
        b1, se1 = efficiency_bound_detail(1, 2 * 10**5, seed=8)
        b2, se2 = efficiency_bound_detail(1, 4 * 10**5, seed=9)
        assert abs(b1 - b2) < 3 * math.hypot(se1, se2)

    def test_se_scales_with_draws(self):
        _, se1 = efficiency_bound_detail(2, 10**5, seed=10)
        _, se2 = efficiency_bound_detail(2, 4 * 10**5, seed=10)
        assert se2 == pytest.approx(se1 / 2, rel=0.3)
