import math

import numpy as np
import pytest

from qdcascade import cascade, metrics, quantum

from conftest import random_density_matrix


def model_state(s=0.0, tau1=241.0, tau_ss=11.0, k=0.978112, omega=0.0, background="unpolarized"):
    params = cascade.CascadeParams(
        s_ueV=s, tau1_ps=tau1, tau_ss_ns=tau_ss, k=k, omega_deg=omega,
        background=background)
    return cascade.time_averaged_state(params)


class TestFidelityToBell:
    def test_target_state(self):
        assert metrics.fidelity_to_bell(quantum.projector(quantum.bell_state())) == pytest.approx(
            1.0, abs=1e-15)

    def test_maximally_mixed(self):
        assert metrics.fidelity_to_bell(np.eye(4) / 4) == pytest.approx(0.25, abs=1e-15)

    def test_source_model_value(self):
        # equals the closed form by construction; parameters of the first dot
        rho = model_state(k=0.978, tau_ss=11.0)
        assert metrics.fidelity_to_bell(rho) == pytest.approx(0.9677742193755003, abs=1e-12)

    def test_phase_rotation_identity(self, rng):
        # evaluating at target phase omega equals rotating arm-2 V by -omega
        for _ in range(10):
            rho = random_density_matrix(rng)
            omega = rng.uniform(-180, 180)
            rot = np.kron(np.eye(2), np.diag([1.0, np.exp(-1j * np.deg2rad(omega))]))
            rotated = rot @ rho @ rot.conj().T
            assert metrics.fidelity_to_bell(rho, omega) == pytest.approx(
                metrics.fidelity_to_bell(rotated, 0.0), abs=1e-12)

    def test_best_phase_maximizes(self, rng):
        for _ in range(10):
            rho = random_density_matrix(rng)
            f_best, omega_best = metrics.best_phase_fidelity(rho)
            grid = np.linspace(-180, 180, 721)
            values = [metrics.fidelity_to_bell(rho, w) for w in grid]
            assert f_best >= max(values) - 1e-9
            assert metrics.fidelity_to_bell(rho, omega_best) == pytest.approx(f_best, abs=1e-12)


class TestConcurrence:
    def test_maximally_entangled_states(self):
        for omega in (0.0, 90.0, 180.0):
            rho = quantum.projector(quantum.bell_state(omega))
            assert metrics.concurrence(rho) == pytest.approx(1.0, abs=1e-9)
        # the other Bell pair (|HV> + |VH>)/sqrt(2)
        ket = (quantum.two_photon_state("HV") + quantum.two_photon_state("VH")) / np.sqrt(2)
        assert metrics.concurrence(quantum.projector(ket)) == pytest.approx(1.0, abs=1e-9)

    def test_product_state(self):
        assert metrics.concurrence(
            quantum.projector(quantum.two_photon_state("HH"))) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("p", [0.0, 1.0 / 3.0, 0.6, 1.0])
    def test_werner_analytic_oracle(self, p):
        rho = p * quantum.projector(quantum.bell_state()) + (1 - p) * np.eye(4) / 4
        expected = max(0.0, (3.0 * p - 1.0) / 2.0)
        assert metrics.concurrence(rho) == pytest.approx(expected, abs=1e-9)

    def test_model_family_closed_form(self):
        # for states with only HH/VV coherence the concurrence reduces to
        # max(0, 2|rho_HH,VV| - 2 sqrt(rho_HV,HV rho_VH,VH))
        for s in (0.0, 1.0, 3.0):
            for k in (0.9, 0.978112, 1.0):
                rho = model_state(s=s, k=k, omega=-9.0)
                expected = max(0.0, 2 * abs(rho[0, 3]) - 2 * math.sqrt(
                    rho[1, 1].real * rho[2, 2].real))
                assert metrics.concurrence(rho) == pytest.approx(expected, abs=1e-9)


class TestLargestEigenvalue:
    def test_pure_state(self):
        assert metrics.largest_eigenvalue(
            quantum.projector(quantum.bell_state())) == pytest.approx(1.0, abs=1e-12)

    def test_maximally_mixed(self):
        assert metrics.largest_eigenvalue(np.eye(4) / 4) == pytest.approx(0.25, abs=1e-15)

    def test_dominates_fidelity(self, rng):
        # the Bell overlap can never exceed the top eigenvalue
        for _ in range(20):
            rho = random_density_matrix(rng)
            assert metrics.largest_eigenvalue(rho) >= metrics.fidelity_to_bell(rho) - 1e-9
        rho = model_state()
        assert metrics.largest_eigenvalue(rho) >= metrics.fidelity_to_bell(rho) - 1e-9


class TestVisibilities:
    def test_perfect_contrast(self):
        counts = {"HH": 100, "HV": 0, "DD": 100, "DA": 0, "RR": 0, "RL": 100}
        v = metrics.visibilities_from_counts(counts)
        assert (v.c_linear, v.c_diagonal, v.c_circular) == (1.0, 1.0, -1.0)

    def test_no_contrast(self):
        counts = {label: 50 for label in metrics.REDUCED6_LABELS}
        v = metrics.visibilities_from_counts(counts)
        assert (v.c_linear, v.c_diagonal, v.c_circular) == (0.0, 0.0, 0.0)

    def test_target_state_born_rule(self):
        v = metrics.visibilities_from_state(quantum.projector(quantum.bell_state()))
        assert v.c_linear == pytest.approx(1.0, abs=1e-12)
        assert v.c_diagonal == pytest.approx(1.0, abs=1e-12)
        assert v.c_circular == pytest.approx(-1.0, abs=1e-12)

    def test_missing_and_zero_rejected(self):
        with pytest.raises(ValueError, match="missing settings"):
            metrics.visibilities_from_counts({"HH": 1, "HV": 1})
        counts = {label: 0 for label in metrics.REDUCED6_LABELS}
        with pytest.raises(ValueError, match="zero total"):
            metrics.visibilities_from_counts(counts)

    def test_accepts_record_objects(self):
        from qdcascade import tomography
        settings = tomography.standard_settings("reduced6")
        records = [tomography.CoincidenceRecord(s, 25.0) for s in settings]
        v = metrics.visibilities_from_counts(records)
        assert v.c_linear == 0.0


class TestVisibilityFidelity:
    def test_endpoints(self):
        assert metrics.visibility_fidelity(metrics.Visibilities(1, 1, -1)) == 1.0
        assert metrics.visibility_fidelity(metrics.Visibilities(0, 0, 0)) == 0.25

    def test_agrees_with_overlap_at_zero_splitting(self):
        rho = model_state(s=0.0, omega=0.0)
        vis_f = metrics.visibility_fidelity(metrics.visibilities_from_state(rho))
        assert vis_f == pytest.approx(metrics.fidelity_to_bell(rho), abs=1e-12)

    def test_never_exceeds_best_phase_overlap(self):
        for s in (0.0, 1.0, 2.5, 4.0):
            for omega in (0.0, -9.0, 20.0):
                rho = model_state(s=s, omega=omega)
                vis_f = metrics.visibility_fidelity(metrics.visibilities_from_state(rho))
                f_best, _ = metrics.best_phase_fidelity(rho)
                assert vis_f <= f_best + 1e-9

    def test_phase_makes_estimators_differ(self):
        # with a setup phase and nonzero splitting the six-setting estimate
        # falls below the phase-optimized overlap
        rho = model_state(s=4.0, omega=-9.0)
        vis_f = metrics.visibility_fidelity(metrics.visibilities_from_state(rho))
        f_best, _ = metrics.best_phase_fidelity(rho)
        assert vis_f < f_best - 1e-6


class TestKFromG2:
    def test_first_dot_value(self):
        # (1 - 0.008)(1 - 0.014), compare at the quoted 0.978(4) precision
        k = metrics.k_from_g2(0.008, 0.014)
        assert k == pytest.approx(0.978112, abs=1e-12)
        assert k == pytest.approx(0.9781, abs=1e-4)

    def test_trivial_values(self):
        assert metrics.k_from_g2(0.0, 0.0) == 1.0
        assert metrics.k_from_g2(1.0, 0.0) == 0.0

    def test_thermal_inputs_clamp_with_warning(self):
        with pytest.warns(UserWarning, match="clamped"):
            assert metrics.k_from_g2(1.4, 1.2) >= 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            metrics.k_from_g2(-0.1, 0.0)
