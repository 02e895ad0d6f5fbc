import math

import numpy as np
import pytest

from qdcascade import cascade, fitting, metrics

K_QD1 = metrics.k_from_g2(0.008, 0.014)
S_GRID = np.array([0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5])


def synth_points(tau_ss, omega=0.0, sigma=0.01, noise_rng=None, tau1=241.0, k=K_QD1):
    truth = fitting.model_curve(S_GRID, tau1, tau_ss, k, omega_deg=omega)
    if noise_rng is None:
        values = truth
    else:
        values = noise_rng.normal(truth, sigma)
    return [fitting.FssFidelityPoint(s, f, sigma) for s, f in zip(S_GRID, values)]


def closed_form_visibility(s, tau1_ps, tau_ss_ns, k, omega_deg):
    # independently derived: the six-setting estimator on the emitted state is
    # (1 + k g + 2 k g cos(omega + atan x) / sqrt(1 + x^2)) / 4, x = g S tau1 / hbar
    g = cascade.spin_preserved_fraction(tau1_ps, tau_ss_ns)
    x = g * abs(s) * (tau1_ps / 1000.0) / cascade.HBAR_UEV_NS
    phase = np.deg2rad(omega_deg) + np.arctan(x)
    return 0.25 * (1.0 + k * g + 2.0 * k * g * np.cos(phase) / np.sqrt(1.0 + x * x))


class TestModelCurve:
    def test_estimators_agree_at_zero_splitting_zero_phase(self):
        for estimator in fitting.ESTIMATORS:
            value = fitting.model_curve(0.0, 241.0, 11.0, K_QD1, estimator=estimator)
            assert value == pytest.approx(
                cascade.model_fidelity(0.0, 241.0, 11.0, K_QD1), abs=1e-12)

    def test_dm_estimator_reproduces_closed_form_at_zero_phase(self):
        for s in (0.0, 0.7, 2.0, 3.5, 5.0):
            value = fitting.model_curve(s, 241.0, 11.0, K_QD1, estimator="dm_fidelity")
            assert value == pytest.approx(
                cascade.model_fidelity(s, 241.0, 11.0, K_QD1), abs=1e-12)

    def test_visibility_estimator_matches_derived_closed_form(self):
        for s in (0.0, 0.5, 1.5, 3.0, 4.5):
            for omega in (0.0, -9.0, 15.0):
                value = fitting.model_curve(
                    s, 241.0, 14.0, K_QD1, omega_deg=omega, estimator="visibility_fidelity")
                assert value == pytest.approx(
                    closed_form_visibility(s, 241.0, 14.0, K_QD1, omega), abs=1e-12)

    def test_even_in_splitting(self):
        for omega in (0.0, -9.0):
            for estimator in fitting.ESTIMATORS:
                plus = fitting.model_curve(3.0, 241.0, 11.0, K_QD1, omega, estimator)
                minus = fitting.model_curve(-3.0, 241.0, 11.0, K_QD1, omega, estimator)
                assert plus == minus

    def test_continuous_on_grid(self):
        s = np.linspace(-5, 5, 401)
        values = fitting.model_curve(s, 241.0, 14.0, K_QD1, omega_deg=-9.0)
        assert np.max(np.abs(np.diff(values))) < 0.01

    def test_phase_pushes_visibility_below_optimal_overlap(self):
        params = cascade.CascadeParams(
            s_ueV=4.0, tau1_ps=241.0, tau_ss_ns=14.0, k=K_QD1, omega_deg=-9.0)
        rho = cascade.time_averaged_state(params)
        vis = fitting.model_curve(4.0, 241.0, 14.0, K_QD1, -9.0, "visibility_fidelity")
        f_best, _ = metrics.best_phase_fidelity(rho)
        assert vis < f_best - 1e-6

    def test_batch_matches_state_construction(self):
        for s in (0.0, 1.3, 4.0):
            for omega in (0.0, -9.0, 40.0):
                params = cascade.CascadeParams(
                    s_ueV=s, tau1_ps=241.0, tau_ss_ns=11.0, k=0.97, omega_deg=omega)
                ref = cascade.time_averaged_state(params)
                batch = fitting._emitted_states(np.array([s]), 241.0, 11.0, 0.97, omega)[0]
                assert np.max(np.abs(ref - batch)) < 1e-15

    def test_unknown_estimator_rejected(self):
        with pytest.raises(ValueError, match="unknown estimator"):
            fitting.model_curve(0.0, 241.0, 11.0, 1.0, estimator="magic")


class TestFitFssCurve:
    def test_noiseless_recovery_single_parameter(self):
        result = fitting.fit_fss_curve(synth_points(11.0), 241.0, K_QD1)
        assert abs(result.tau_ss_ns - 11.0) / 11.0 < 0.01
        assert result.omega_deg is None
        assert result.dof == len(S_GRID) - 1

    def test_noiseless_recovery_with_phase(self):
        result = fitting.fit_fss_curve(
            synth_points(14.0, omega=-9.0), 241.0, K_QD1, fit_omega=True)
        assert abs(result.tau_ss_ns - 14.0) / 14.0 < 0.01
        assert result.omega_deg == pytest.approx(-9.0, abs=0.1)
        assert result.dof == len(S_GRID) - 2

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(3)
        points = synth_points(14.0, omega=-9.0, noise_rng=rng)
        a = fitting.fit_fss_curve(points, 241.0, K_QD1, fit_omega=True, seed=5, n_boot=20)
        b = fitting.fit_fss_curve(points, 241.0, K_QD1, fit_omega=True, seed=5, n_boot=20)
        assert a == b

    def test_no_scattering_data_reports_unbounded_time(self):
        points = synth_points(math.inf)
        result = fitting.fit_fss_curve(points, 241.0, K_QD1)
        assert result.tau_ss_ns > 100.0 or math.isinf(result.tau_ss_ns)

    def test_chi_squared_scale_on_noisy_data(self):
        rng = np.random.default_rng(8)
        points = synth_points(11.0, noise_rng=rng)
        result = fitting.fit_fss_curve(points, 241.0, K_QD1)
        assert result.chi_squared / result.dof < 3.0

    def test_degenerate_spread_rejected(self):
        points = [fitting.FssFidelityPoint(2.0 + 1e-9 * i, 0.8, 0.01) for i in range(4)]
        with pytest.raises(ValueError, match="degenerate spread"):
            fitting.fit_fss_curve(points, 241.0, K_QD1)

    def test_span_requirement_enforced(self):
        points = [fitting.FssFidelityPoint(s, 0.9, 0.01) for s in (0.0, 0.3, 0.6)]
        with pytest.raises(ValueError, match="span"):
            fitting.fit_fss_curve(points, 241.0, K_QD1)

    def test_too_few_points_rejected(self):
        points = [fitting.FssFidelityPoint(s, 0.9, 0.01) for s in (0.0, 3.0)]
        with pytest.raises(ValueError, match="at least 3"):
            fitting.fit_fss_curve(points, 241.0, K_QD1)

    def test_bootstrap_errors_close_to_covariance_errors(self):
        rng = np.random.default_rng(12)
        points = synth_points(11.0, noise_rng=rng)
        plain = fitting.fit_fss_curve(points, 241.0, K_QD1, seed=0)
        boot = fitting.fit_fss_curve(points, 241.0, K_QD1, seed=0, n_boot=200)
        assert boot.rate_err_per_ns == pytest.approx(plain.rate_err_per_ns, rel=0.5)

    def test_fixing_phase_on_phaseless_truth_changes_little(self):
        # paired comparison: fitting omega on omega = 0 truth data must not
        # bias the scattering time relative to the fixed-phase fit
        rng = np.random.default_rng(31)
        diffs = []
        for _ in range(200):
            points = synth_points(11.0, sigma=0.005, noise_rng=rng)
            fixed = fitting.fit_fss_curve(points, 241.0, K_QD1, fit_omega=False)
            free = fitting.fit_fss_curve(points, 241.0, K_QD1, fit_omega=True)
            diffs.append(free.rate_per_ns - fixed.rate_per_ns)
        spread = float(np.std(diffs))
        assert abs(np.mean(diffs)) < max(3.0 * spread / math.sqrt(len(diffs)), 1e-4)

    def test_light_coverage_study(self):
        # quick version of the coverage property; the acceptance suite runs
        # the full 500-trial study
        rng = np.random.default_rng(2024)
        truth = fitting.model_curve(S_GRID, 241.0, 14.0, K_QD1, omega_deg=-9.0)
        hits_rate = hits_omega = 0
        trials = 100
        for _ in range(trials):
            points = [fitting.FssFidelityPoint(s, rng.normal(f, 0.01), 0.01)
                      for s, f in zip(S_GRID, truth)]
            result = fitting.fit_fss_curve(points, 241.0, K_QD1, fit_omega=True)
            if abs(result.rate_per_ns - 1.0 / 14.0) <= result.rate_err_per_ns:
                hits_rate += 1
            if abs(result.omega_deg - (-9.0)) <= result.omega_err_deg:
                hits_omega += 1
        assert 0.55 <= hits_rate / trials <= 0.80
        assert 0.55 <= hits_omega / trials <= 0.80


class TestDephasingFreeDeviation:
    def test_on_model_points_give_zero(self):
        sigma_s = 0.348
        model_points = []
        for s in S_GRID:
            params = cascade.CascadeParams(
                s_ueV=max(abs(s), 0.25), tau1_ps=241.0, tau_ss_ns=math.inf, k=K_QD1)
            f = cascade.fluctuation_averaged_fidelity(params, sigma_s)
            model_points.append(fitting.FssFidelityPoint(s, f, 0.01))
        result = fitting.dephasing_free_deviation(
            model_points, 241.0, K_QD1, s0_ueV=0.25, sigma_s_ueV=sigma_s)
        assert np.max(np.abs(result.z_scores)) < 1e-9
        assert abs(result.combined_z) < 1e-9

    def test_three_sigma_point(self):
        params = cascade.CascadeParams(s_ueV=0.25, tau1_ps=241.0, tau_ss_ns=math.inf, k=K_QD1)
        f_model = cascade.fluctuation_averaged_fidelity(params, 0.0)
        points = [
            fitting.FssFidelityPoint(0.0, f_model - 3.0 * 0.01, 0.01),
        ]
        result = fitting.dephasing_free_deviation(points, 241.0, K_QD1, sigma_s_ueV=0.0)
        assert result.z_scores[0] == pytest.approx(3.0, abs=1e-9)
        assert result.combined_z == pytest.approx(3.0, abs=1e-9)

    def test_hidden_scattering_detected(self):
        # data generated with a finite scattering time deviate from the
        # scattering-free model by more than 2 sigma in most trials
        rng = np.random.default_rng(99)
        detections = 0
        trials = 40
        combined = []
        for _ in range(trials):
            points = synth_points(11.0, sigma=0.01, noise_rng=rng)
            result = fitting.dephasing_free_deviation(
                points, 241.0, K_QD1, s0_ueV=0.25, sigma_s_ueV=0.348)
            combined.append(result.combined_z)
            if result.combined_z > 2.0:
                detections += 1
        assert detections > trials / 2
        assert np.mean(combined) > 2.0


class TestBackgroundCorrectedPoints:
    def test_k_one_identity(self):
        points = [fitting.FssFidelityPoint(1.0, 0.9, 0.01)]
        assert fitting.background_corrected_points(points, 1.0) == points

    def test_mixed_state_fixed_point(self):
        points = [fitting.FssFidelityPoint(1.0, 0.25, 0.01)]
        corrected = fitting.background_corrected_points(points, 0.9)
        assert corrected[0].fidelity == pytest.approx(0.25, abs=1e-12)

    def test_arithmetic_inverse(self):
        # oracle: (0.968 - (1 - 0.978)/4) / 0.978
        points = [fitting.FssFidelityPoint(0.0, 0.968, 0.002)]
        corrected = fitting.background_corrected_points(points, 0.978)
        expected = (0.968 - (1.0 - 0.978) / 4.0) / 0.978
        assert corrected[0].fidelity == pytest.approx(expected, abs=1e-12)
        assert corrected[0].fidelity == pytest.approx(0.9841513292433537, abs=1e-12)
        assert corrected[0].sigma_f == pytest.approx(0.002 / 0.978, abs=1e-15)

    def test_unreasonable_k_warns(self):
        points = [fitting.FssFidelityPoint(0.0, 0.99, 0.001)]
        with pytest.warns(UserWarning, match="exceeds 1"):
            fitting.background_corrected_points(points, 0.9)
