import math

import numpy as np
import pytest

from qdcascade import cascade, metrics, quantum


def qd1_params(**overrides):
    defaults = dict(s_ueV=0.0, tau1_ps=241.0, tau_ss_ns=11.0, k=0.978112)
    defaults.update(overrides)
    return cascade.CascadeParams(**defaults)


class TestSpinPreservedFraction:
    def test_no_scattering(self):
        assert cascade.spin_preserved_fraction(241.0, math.inf) == 1.0

    def test_equal_timescales(self):
        assert cascade.spin_preserved_fraction(241.0, 0.241) == pytest.approx(0.5, abs=1e-15)

    def test_measured_source_values(self):
        # direct evaluation: 1 / (1 + 0.241 ns / 11 ns)
        assert cascade.spin_preserved_fraction(241.0, 11.0) == pytest.approx(
            1.0 / (1.0 + 0.241 / 11.0), abs=1e-15)
        assert cascade.spin_preserved_fraction(241.0, 11.0) == pytest.approx(
            0.9785606262788008, abs=1e-12)

    @pytest.mark.parametrize("tau1,tau_ss", [(0.0, 1.0), (-1.0, 1.0), (241.0, 0.0), (241.0, -2.0)])
    def test_nonpositive_times_rejected(self, tau1, tau_ss):
        with pytest.raises(ValueError):
            cascade.spin_preserved_fraction(tau1, tau_ss)


class TestModelFidelity:
    def test_perfect_source(self):
        assert cascade.model_fidelity(0.0, 290.0, math.inf, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_qd2_endpoint(self):
        # exact fraction 5629/5716 for S=0, tau1=290 ps, tau_ss=14 ns, k=1
        value = cascade.model_fidelity(0.0, 290.0, 14.0, 1.0)
        assert value == pytest.approx(5629.0 / 5716.0, abs=1e-15)
        assert value == pytest.approx(0.9847795661301609, abs=1e-12)

    def test_unit_lorentzian_argument_gives_three_quarters(self):
        # S* solves S tau1 / hbar = 1, where the coherent term is halved
        s_star = cascade.HBAR_UEV_NS / 0.241
        assert cascade.model_fidelity(s_star, 241.0, math.inf, 1.0) == pytest.approx(
            0.75, abs=1e-12)

    def test_monotonicity(self):
        s_grid = np.linspace(0.0, 6.0, 13)
        f = cascade.model_fidelity(s_grid, 241.0, 11.0, 0.978)
        assert np.all(np.diff(f) < 0)
        # non-increasing in tau1, non-decreasing in tau_ss and k
        assert cascade.model_fidelity(1.0, 150.0, 11.0, 0.978) >= cascade.model_fidelity(
            1.0, 290.0, 11.0, 0.978)
        assert cascade.model_fidelity(1.0, 241.0, 20.0, 0.978) >= cascade.model_fidelity(
            1.0, 241.0, 5.0, 0.978)
        assert cascade.model_fidelity(1.0, 241.0, 11.0, 0.99) >= cascade.model_fidelity(
            1.0, 241.0, 11.0, 0.90)


class TestTimeAveragedState:
    def test_ideal_limit_is_target_state(self):
        params = cascade.CascadeParams(s_ueV=0.0, tau1_ps=241.0, tau_ss_ns=math.inf, k=1.0)
        rho = cascade.time_averaged_state(params)
        assert np.max(np.abs(rho - quantum.projector(quantum.bell_state()))) < 1e-15

    def test_k_zero_returns_background(self):
        params = cascade.CascadeParams(s_ueV=1.0, tau1_ps=241.0, tau_ss_ns=11.0, k=0.0)
        assert np.max(np.abs(cascade.time_averaged_state(params) - np.eye(4) / 4)) < 1e-15

    @pytest.mark.parametrize("s", [0.0, 0.5, 2.5, 4.0, -3.0])
    @pytest.mark.parametrize("omega", [0.0, -9.0, 37.0])
    def test_fidelity_matches_closed_form(self, s, omega):
        # the central consistency contract: the state's Bell fidelity at
        # the setup phase reproduces the closed form exactly
        params = qd1_params(s_ueV=s, omega_deg=omega)
        rho = cascade.time_averaged_state(params)
        expected = cascade.model_fidelity(s, 241.0, 11.0, 0.978112)
        assert metrics.fidelity_to_bell(rho, omega_deg=omega) == pytest.approx(
            expected, abs=1e-12)

    def test_always_physical(self, rng):
        for _ in range(50):
            params = cascade.CascadeParams(
                s_ueV=rng.uniform(-6, 6),
                tau1_ps=rng.uniform(50, 600),
                tau_ss_ns=rng.choice([rng.uniform(0.05, 50), math.inf]),
                k=rng.uniform(0, 1),
                omega_deg=rng.uniform(-180, 180),
                background=rng.choice(["unpolarized", "vertical"]),
            )
            rho = cascade.time_averaged_state(params)
            quantum.validate_density_matrix(rho)

    def test_coherence_magnitude_bounded_and_real_at_zero(self):
        for s in np.linspace(-8, 8, 33):
            c = cascade.coherence(s, 241.0, 11.0, 0.0)
            assert abs(c) <= 1.0 + 1e-15
        c0 = complex(cascade.coherence(0.0, 241.0, 11.0, 0.0))
        assert c0.imag == pytest.approx(0.0, abs=1e-15)
        assert c0.real > 0


class TestOverhauser:
    def test_measured_field_scale(self):
        sigma = cascade.overhauser_sigma(4.0, 4.0e5)
        assert sigma == pytest.approx(4.0 / math.sqrt(4.0e5), abs=1e-15)
        assert sigma * 1e3 == pytest.approx(6.3246, abs=1e-3)

    def test_trivial_limits(self):
        assert cascade.overhauser_sigma(0.0, 100) == 0.0
        assert cascade.overhauser_sigma(2.5, 1) == 2.5

    def test_invalid_nuclei_count_rejected(self):
        with pytest.raises(ValueError):
            cascade.overhauser_sigma(4.0, 0)

    def test_fss_from_field(self):
        assert cascade.fss_from_overhauser(1.5, 0.0, -0.15, 1.1) == 1.5
        value = cascade.fss_from_overhauser(0.0, 6.32e-3, -0.15, 1.1)
        assert value == pytest.approx(57.8838 * 0.95 * 6.32e-3, abs=1e-12)
        # flipping the field flips the deviation symmetrically
        up = cascade.fss_from_overhauser(1.0, 5e-3, -0.15, 1.1)
        down = cascade.fss_from_overhauser(1.0, -5e-3, -0.15, 1.1)
        assert up - 1.0 == pytest.approx(-(down - 1.0), abs=1e-15)


class TestFluctuationAveragedFidelity:
    def test_zero_sigma_reduces_to_closed_form(self):
        params = qd1_params(s_ueV=1.3)
        assert cascade.fluctuation_averaged_fidelity(params, 0.0) == cascade.model_fidelity(
            1.3, 241.0, 11.0, 0.978112)

    def test_large_sigma_asymptote(self):
        # the coherent term averages away, leaving (1 + k g) / 4
        params = qd1_params()
        g = cascade.spin_preserved_fraction(241.0, 11.0)
        target = 0.25 * (1.0 + 0.978112 * g)
        value = cascade.fluctuation_averaged_fidelity(params, 1e4, quadrature_order=200)
        assert value == pytest.approx(target, abs=1e-3)

    def test_quadrature_matches_monte_carlo_oracle(self):
        params = qd1_params()
        sigma = 0.348
        mc_rng = np.random.default_rng(1234)
        samples = mc_rng.normal(params.s_ueV, sigma, size=1_000_000)
        oracle = float(np.mean(cascade.model_fidelity(samples, 241.0, 11.0, 0.978112)))
        for order in (20, 41, 80):
            value = cascade.fluctuation_averaged_fidelity(params, sigma, quadrature_order=order)
            assert value == pytest.approx(oracle, abs=1e-4)

    def test_overhauser_jitter_costs_less_than_one_percent(self):
        params = qd1_params()
        sigma = cascade.fss_sigma(params)
        drop = cascade.model_fidelity(0.0, 241.0, 11.0, 0.978112) - \
            cascade.fluctuation_averaged_fidelity(params, sigma)
        assert 0.0 < drop < 0.01


class TestPurcellProjection:
    def test_factor_one_is_identity(self):
        params = cascade.CascadeParams(s_ueV=0.7, tau1_ps=290.0, tau_ss_ns=14.0, k=0.96)
        assert cascade.purcell_projected_fidelity(params, 1.0) == cascade.model_fidelity(
            0.7, 290.0, 14.0, 0.96)

    def test_qd2_projection_surpasses_target(self):
        params = cascade.CascadeParams(s_ueV=0.0, tau1_ps=290.0, tau_ss_ns=14.0, k=1.0)
        value = cascade.purcell_projected_fidelity(params, 3.0)
        assert value == pytest.approx(0.9948569401749822, abs=1e-12)
        assert value > 0.99

    def test_infinite_enhancement_limit(self):
        params = cascade.CascadeParams(s_ueV=0.0, tau1_ps=290.0, tau_ss_ns=14.0, k=0.9)
        assert cascade.purcell_projected_fidelity(params, 1e9) == pytest.approx(
            0.25 * (1 + 3 * 0.9), abs=1e-6)

    def test_enhancement_below_one_rejected(self):
        params = cascade.CascadeParams(s_ueV=0.0, tau1_ps=290.0, tau_ss_ns=14.0, k=1.0)
        with pytest.raises(ValueError):
            cascade.purcell_projected_fidelity(params, 0.5)


class TestParamsConfig:
    def test_round_trip(self):
        params = cascade.CascadeParams(
            s_ueV=1.2, tau1_ps=241.0, tau_ss_ns=11.0, k=0.978, omega_deg=-9.0,
            s0_ueV=0.25, background="vertical")
        doc = params.to_config_dict()
        assert set(doc) == set(cascade.CONFIG_KEYS)
        restored = cascade.CascadeParams.from_config_dict(doc)
        assert restored == params
        assert restored.to_config_dict() == doc

    def test_infinite_tau_ss_serializes(self):
        params = cascade.CascadeParams(s_ueV=0.0, tau1_ps=241.0, tau_ss_ns=math.inf, k=1.0)
        doc = params.to_config_dict()
        assert doc["tau_ss_ns"] == "inf"
        assert math.isinf(cascade.CascadeParams.from_config_dict(doc).tau_ss_ns)

    def test_matrix_background_round_trip(self):
        bg = quantum.projector(quantum.two_photon_state("VV"))
        params = cascade.CascadeParams(0.0, 241.0, 11.0, 0.97, background=bg)
        doc = params.to_config_dict()
        restored = cascade.CascadeParams.from_config_dict(doc)
        assert np.max(np.abs(restored.background_state() - bg)) < 1e-15

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown cascade parameter key"):
            cascade.CascadeParams.from_config_dict(
                {"S_ueV": 0, "tau1_ps": 241, "tau_ss_ns": 11, "k": 1, "zeta": 3})

    @pytest.mark.parametrize("bad", [
        dict(tau1_ps=-1.0), dict(tau_ss_ns=0.0), dict(k=1.5), dict(k=-0.1),
        dict(n_nuclei=0.0),
    ])
    def test_invalid_values_rejected(self, bad):
        base = dict(s_ueV=0.0, tau1_ps=241.0, tau_ss_ns=11.0, k=0.978)
        base.update(bad)
        with pytest.raises(ValueError):
            cascade.CascadeParams(**base)
