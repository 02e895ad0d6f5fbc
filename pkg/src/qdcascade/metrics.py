"""Entanglement and quality metrics of two-photon density matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import quantum

# Basis pairs entering the three correlation visibilities: (co, cross).
VISIBILITY_PAIRS = {
    "linear": ("HH", "HV"),
    "diagonal": ("DD", "DA"),
    "circular": ("RR", "RL"),
}
REDUCED6_LABELS = ("HH", "HV", "DD", "DA", "RR", "RL")

_SPIN_FLIP = np.kron(quantum.SIGMA_Y, quantum.SIGMA_Y)


@dataclass(frozen=True)
class Visibilities:
    """Correlation visibilities in the linear, diagonal and circular bases."""

    c_linear: float
    c_diagonal: float
    c_circular: float

    def __post_init__(self) -> None:
        for name, value in (
            ("c_linear", self.c_linear),
            ("c_diagonal", self.c_diagonal),
            ("c_circular", self.c_circular),
        ):
            if abs(value) > 1.0 + 1e-12:
                raise ValueError(f"{name} must lie in [-1, 1], got {value}")


@dataclass(frozen=True)
class EntanglementMetrics:
    """Fidelity, concurrence and largest eigenvalue, each with an uncertainty."""

    fidelity: float
    concurrence: float
    largest_eigenvalue: float
    fidelity_err: Optional[float] = None
    concurrence_err: Optional[float] = None
    largest_eigenvalue_err: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "fidelity": {"value": self.fidelity, "error": self.fidelity_err},
            "concurrence": {"value": self.concurrence, "error": self.concurrence_err},
            "largest_eigenvalue": {
                "value": self.largest_eigenvalue,
                "error": self.largest_eigenvalue_err,
            },
        }


def fidelity_to_bell(rho: np.ndarray, omega_deg: float = 0.0) -> float:
    """Overlap <psi(omega)|rho|psi(omega)> with |psi(omega)> = (|HH> + e^{i omega}|VV>)/sqrt(2)."""
    rho = np.asarray(rho, dtype=complex)
    target = quantum.bell_state(omega_deg)
    return float(np.real(np.vdot(target, rho @ target)))


def best_phase_fidelity(rho: np.ndarray) -> tuple[float, float]:
    """Maximum Bell-state fidelity over the target phase, with the optimal phase.

    Returns (fidelity, omega_deg).  The maximum of
    (rho_HH,HH + rho_VV,VV)/2 + Re(e^{i omega} rho_HH,VV) is attained at
    omega = -arg(rho_HH,VV).
    """
    rho = np.asarray(rho, dtype=complex)
    coherence = complex(rho[0, 3])
    base = 0.5 * float(np.real(rho[0, 0] + rho[3, 3]))
    omega = 0.0 if abs(coherence) < 1e-300 else -float(np.angle(coherence))
    return base + abs(coherence), float(np.rad2deg(omega))


def largest_eigenvalue(rho: np.ndarray) -> float:
    """Top eigenvalue of the density matrix."""
    w, _ = quantum.eig_hermitian(rho)
    return float(w[0])


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    The spin-flipped state is rho~ = (sigma_y x sigma_y) rho* (sigma_y x sigma_y)
    with conjugation in the H/V product basis; the concurrence is
    max(0, l1 - l2 - l3 - l4) with l_i the descending square roots of the
    eigenvalues of rho rho~, computed here through the Hermitian product
    sqrt(rho) rho~ sqrt(rho) which shares its spectrum.
    """
    rho = np.asarray(rho, dtype=complex)
    rho_tilde = _SPIN_FLIP @ rho.conj() @ _SPIN_FLIP
    root = quantum.matrix_sqrt_psd(rho, neg_atol=1e-7)
    product = root @ rho_tilde @ root
    w, _ = quantum.eig_hermitian(0.5 * (product + product.conj().T), atol=1e-7)
    lam = np.sqrt(np.clip(w, 0.0, None))
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def _counts_by_label(records) -> dict[str, float]:
    if isinstance(records, Mapping):
        return {str(k): float(v) for k, v in records.items()}
    table: dict[str, float] = {}
    for record in records:
        table[record.setting.label] = float(record.counts)
    return table


def visibilities_from_counts(records) -> Visibilities:
    """Correlation visibilities from the six-setting reduced measurement.

    ``records`` is either a mapping from labels to counts or an iterable of
    coincidence records; the labels HH, HV, DD, DA, RR, RL must be present.
    Each visibility is (n_co - n_cross) / (n_co + n_cross).
    """
    table = _counts_by_label(records)
    missing = [label for label in REDUCED6_LABELS if label not in table]
    if missing:
        raise ValueError(f"missing settings for visibilities: {', '.join(missing)}")
    values = {}
    for basis, (co, cross) in VISIBILITY_PAIRS.items():
        total = table[co] + table[cross]
        if total <= 0:
            raise ValueError(f"zero total counts in the {basis} basis")
        values[basis] = (table[co] - table[cross]) / total
    return Visibilities(values["linear"], values["diagonal"], values["circular"])


def visibilities_from_state(rho: np.ndarray) -> Visibilities:
    """Born-rule visibilities of a state: ideal projectors, no shot noise."""
    rho = np.asarray(rho, dtype=complex)
    probs = {}
    for label in REDUCED6_LABELS:
        ket = quantum.two_photon_state(label)
        probs[label] = float(np.real(np.vdot(ket, rho @ ket)))
    return visibilities_from_counts(probs)


def visibility_fidelity(v: Visibilities) -> float:
    """Fidelity estimate (1 + C_linear + C_diagonal - C_circular) / 4."""
    return 0.25 * (1.0 + v.c_linear + v.c_diagonal - v.c_circular)


def k_from_g2(g2_x: float, g2_xx: float) -> float:
    """Single-emitter fraction k = (1 - g2_x)(1 - g2_xx), clamped to [0, 1].

    Autocorrelation values above 1 (thermal-light regime) are accepted but
    produce a clamped result and a warning, since the product formula is a
    low-background approximation.
    """
    if g2_x < 0 or g2_xx < 0:
        raise ValueError(f"g2 values must be nonnegative, got ({g2_x}, {g2_xx})")
    if g2_x > 1 or g2_xx > 1:
        warnings.warn(
            f"g2 value above 1 (g2_x={g2_x}, g2_xx={g2_xx}); k clamped to [0, 1]",
            stacklevel=2,
        )
    k = (1.0 - g2_x) * (1.0 - g2_xx)
    return float(min(1.0, max(0.0, k)))
