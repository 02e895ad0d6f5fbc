"""Forward model of the biexciton-exciton photon-pair source.

Maps physical source parameters (fine-structure splitting, exciton lifetime,
spin-scattering time, single-emitter fraction, setup phase, background light)
to the emitted two-photon density matrix and to the closed-form fidelity of
that state with the target Bell state.  Also covers the nuclear-field
(Overhauser) fluctuation of the splitting and the lifetime shortening by a
Purcell cavity.

Unit policy: the splitting S is in ueV, the exciton lifetime tau1 in ps and
the spin-scattering time tau_ss in ns at every interface.  The single ps->ns
conversion happens in :func:`_tau1_ns`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Mapping

import numpy as np

from . import quantum

# Physical constants in the library's working units.
HBAR_UEV_NS = 0.6582120     # reduced Planck constant, ueV*ns
MU_B_UEV_PER_T = 57.8838    # Bohr magneton, ueV/T

_UNPOLARIZED = np.eye(4, dtype=complex) / 4.0
_VERTICAL = np.zeros((4, 4), dtype=complex)
_VERTICAL[3, 3] = 1.0

BACKGROUND_PRESETS = {
    "unpolarized": _UNPOLARIZED,
    "vertical": _VERTICAL,
}

# Config document keys, exactly as they appear in serialized parameter files.
CONFIG_KEYS = (
    "S_ueV", "S0_ueV", "tau1_ps", "tau_ss_ns", "k", "omega_deg",
    "background", "B_max_T", "N_nuclei", "g_e_z", "g_h_z",
)


def _tau1_ns(tau1_ps: float) -> float:
    """The one place where the exciton lifetime is converted ps -> ns."""
    return tau1_ps / 1000.0


@dataclass(frozen=True)
class CascadeParams:
    """Physical parameters of the photon-pair source.

    ``tau_ss_ns`` may be ``math.inf`` for a source with no spin scattering.
    ``background`` is either a preset name ("unpolarized", "vertical") or an
    explicit 4x4 density matrix of the background light.
    """

    s_ueV: float
    tau1_ps: float
    tau_ss_ns: float
    k: float
    omega_deg: float = 0.0
    s0_ueV: float = 0.0
    background: Any = "unpolarized"
    b_max_t: float = 4.0
    n_nuclei: float = 4.0e5
    g_e_z: float = -0.15
    g_h_z: float = 1.1

    def __post_init__(self) -> None:
        if not (self.tau1_ps > 0):
            raise ValueError(f"tau1_ps must be positive, got {self.tau1_ps}")
        if not (self.tau_ss_ns > 0):
            raise ValueError(f"tau_ss_ns must be positive (or inf), got {self.tau_ss_ns}")
        if not (0.0 <= self.k <= 1.0):
            raise ValueError(f"k must be in [0, 1], got {self.k}")
        if self.b_max_t < 0:
            raise ValueError(f"B_max_T must be nonnegative, got {self.b_max_t}")
        if self.n_nuclei < 1:
            raise ValueError(f"N_nuclei must be at least 1, got {self.n_nuclei}")
        if isinstance(self.background, str):
            if self.background not in BACKGROUND_PRESETS:
                raise ValueError(
                    f"unknown background preset {self.background!r}; expected one "
                    f"of {sorted(BACKGROUND_PRESETS)} or an explicit matrix"
                )
        else:
            quantum.validate_density_matrix(self.background)

    def background_state(self) -> np.ndarray:
        if isinstance(self.background, str):
            return BACKGROUND_PRESETS[self.background].copy()
        return np.asarray(self.background, dtype=complex).copy()

    def with_background(self, background: Any) -> "CascadeParams":
        return replace(self, background=background)

    def to_config_dict(self) -> dict:
        bg = self.background
        if not isinstance(bg, str):
            bg = {
                "re": np.asarray(bg).real.tolist(),
                "im": np.asarray(bg).imag.tolist(),
            }
        return {
            "S_ueV": self.s_ueV,
            "S0_ueV": self.s0_ueV,
            "tau1_ps": self.tau1_ps,
            "tau_ss_ns": "inf" if math.isinf(self.tau_ss_ns) else self.tau_ss_ns,
            "k": self.k,
            "omega_deg": self.omega_deg,
            "background": bg,
            "B_max_T": self.b_max_t,
            "N_nuclei": self.n_nuclei,
            "g_e_z": self.g_e_z,
            "g_h_z": self.g_h_z,
        }

    @classmethod
    def from_config_dict(cls, doc: Mapping) -> "CascadeParams":
        unknown = sorted(set(doc) - set(CONFIG_KEYS))
        if unknown:
            raise ValueError(f"unknown cascade parameter key: {unknown[0]!r}")
        missing = [key for key in ("S_ueV", "tau1_ps", "tau_ss_ns", "k") if key not in doc]
        if missing:
            raise ValueError(f"missing cascade parameter key: {missing[0]!r}")
        tau_ss = doc["tau_ss_ns"]
        if isinstance(tau_ss, str):
            tau_ss = float(tau_ss)
        background = doc.get("background", "unpolarized")
        if isinstance(background, Mapping):
            background = np.asarray(background["re"]) + 1j * np.asarray(background["im"])
        return cls(
            s_ueV=float(doc["S_ueV"]),
            tau1_ps=float(doc["tau1_ps"]),
            tau_ss_ns=tau_ss,
            k=float(doc["k"]),
            omega_deg=float(doc.get("omega_deg", 0.0)),
            s0_ueV=float(doc.get("S0_ueV", 0.0)),
            background=background,
            b_max_t=float(doc.get("B_max_T", 4.0)),
            n_nuclei=float(doc.get("N_nuclei", 4.0e5)),
            g_e_z=float(doc.get("g_e_z", -0.15)),
            g_h_z=float(doc.get("g_h_z", 1.1)),
        )


def spin_preserved_fraction(tau1_ps: float, tau_ss_ns: float) -> float:
    """Fraction g = 1/(1 + tau1/tau_ss) of pairs unaffected by spin scattering."""
    if not (tau1_ps > 0):
        raise ValueError(f"tau1_ps must be positive, got {tau1_ps}")
    if not (tau_ss_ns > 0):
        raise ValueError(f"tau_ss_ns must be positive (or inf), got {tau_ss_ns}")
    if math.isinf(tau_ss_ns):
        return 1.0
    return 1.0 / (1.0 + _tau1_ns(tau1_ps) / tau_ss_ns)


def coherence(s_ueV, tau1_ps: float, tau_ss_ns: float, omega_deg: float = 0.0):
    """Lifetime-averaged coherence of the HH/VV superposition.

    Returns the complex factor c = e^{i omega} / (1 - i g S tau1 / hbar) that
    multiplies |VV><HH| in the coherent part of the emitted state (its
    conjugate multiplies |HH><VV|).  Magnitude 1/sqrt(1 + x^2) and phase
    omega + arctan(x) with x = g S tau1 / hbar.
    """
    g = spin_preserved_fraction(tau1_ps, tau_ss_ns)
    x = g * np.asarray(s_ueV, dtype=float) * _tau1_ns(tau1_ps) / HBAR_UEV_NS
    return np.exp(1j * np.deg2rad(omega_deg)) / (1.0 - 1j * x)


def time_averaged_state(params: CascadeParams) -> np.ndarray:
    """Emitted two-photon density matrix, averaged over the exponential decay.

    rho = k [g rho_coh + (1 - g) I/4] + (1 - k) rho_background, where rho_coh
    carries the coherence from :func:`coherence` between HH and VV.  With the
    unpolarized background this construction reproduces
    ``model_fidelity(params)`` exactly when the fidelity is evaluated against
    the Bell state carrying the same setup phase.
    """
    g = spin_preserved_fraction(params.tau1_ps, params.tau_ss_ns)
    c = complex(coherence(params.s_ueV, params.tau1_ps, params.tau_ss_ns, params.omega_deg))
    rho_coh = np.zeros((4, 4), dtype=complex)
    rho_coh[0, 0] = 0.5
    rho_coh[3, 3] = 0.5
    rho_coh[3, 0] = 0.5 * c
    rho_coh[0, 3] = 0.5 * np.conj(c)
    rho = params.k * (g * rho_coh + (1.0 - g) * np.eye(4) / 4.0)
    rho = rho + (1.0 - params.k) * params.background_state()
    return rho


def model_fidelity(s_ueV, tau1_ps: float, tau_ss_ns: float, k: float):
    """Closed-form fidelity of the source model.

    f = (1 + k g + 2 k g / (1 + (g S tau1 / hbar)^2)) / 4, the overlap of the
    emitted state (unpolarized background, setup phase folded into the target)
    with the Bell state.  Accepts a scalar or an array of splittings.
    """
    if not (0.0 <= k <= 1.0):
        raise ValueError(f"k must be in [0, 1], got {k}")
    g = spin_preserved_fraction(tau1_ps, tau_ss_ns)
    x = g * np.asarray(s_ueV, dtype=float) * _tau1_ns(tau1_ps) / HBAR_UEV_NS
    result = 0.25 * (1.0 + k * g + 2.0 * k * g / (1.0 + x * x))
    if np.ndim(s_ueV) == 0:
        return float(result)
    return result


def overhauser_sigma(b_max_t: float, n_nuclei: float) -> float:
    """Standard deviation B_max / sqrt(N) of the fluctuating nuclear field, in T."""
    if b_max_t < 0:
        raise ValueError(f"B_max_T must be nonnegative, got {b_max_t}")
    if n_nuclei < 1:
        raise ValueError(f"N_nuclei must be at least 1, got {n_nuclei}")
    return b_max_t / math.sqrt(n_nuclei)


def fss_from_overhauser(s0_ueV: float, b_z_t: float, g_e_z: float, g_h_z: float) -> float:
    """Splitting S = S0 + mu_B (g_e + g_h) B_z for a vertical nuclear field B_z."""
    return s0_ueV + MU_B_UEV_PER_T * (g_e_z + g_h_z) * b_z_t


def fss_sigma(params: CascadeParams) -> float:
    """Standard deviation of the splitting induced by the Overhauser field, ueV."""
    sigma_b = overhauser_sigma(params.b_max_t, params.n_nuclei)
    return abs(MU_B_UEV_PER_T * (params.g_e_z + params.g_h_z)) * sigma_b


def fluctuation_averaged_fidelity(
    params: CascadeParams,
    sigma_s_ueV: float,
    quadrature_order: int = 41,
) -> float:
    """Fidelity averaged over Gaussian splitting fluctuations.

    Computes E[model_fidelity(S)] with S ~ Normal(params.s_ueV, sigma_s_ueV)
    by Gauss-Hermite quadrature of the given order.
    """
    if sigma_s_ueV < 0:
        raise ValueError(f"sigma_s_ueV must be nonnegative, got {sigma_s_ueV}")
    if quadrature_order < 1:
        raise ValueError(f"quadrature_order must be at least 1, got {quadrature_order}")
    if sigma_s_ueV == 0.0:
        return model_fidelity(params.s_ueV, params.tau1_ps, params.tau_ss_ns, params.k)
    nodes, weights = np.polynomial.hermite.hermgauss(quadrature_order)
    s = params.s_ueV + math.sqrt(2.0) * sigma_s_ueV * nodes
    values = model_fidelity(s, params.tau1_ps, params.tau_ss_ns, params.k)
    return float(np.sum(weights * values) / math.sqrt(math.pi))


def purcell_projected_fidelity(params: CascadeParams, purcell_factor: float) -> float:
    """Fidelity with the exciton lifetime shortened by a Purcell cavity.

    Evaluates the closed-form fidelity with tau1 replaced by
    tau1 / purcell_factor; all other parameters are unchanged.
    """
    if purcell_factor < 1.0:
        raise ValueError(f"purcell_factor must be at least 1, got {purcell_factor}")
    return model_fidelity(
        params.s_ueV, params.tau1_ps / purcell_factor, params.tau_ss_ns, params.k
    )
