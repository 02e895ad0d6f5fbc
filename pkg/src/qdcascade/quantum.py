"""Polarization-optics and small dense complex linear algebra primitives.

Two-photon states live on the 4-dimensional H/V product space with basis
order (HH, HV, VH, VV); single-photon polarization states are Jones vectors
in the H/V basis.  The circular convention is R = (H - iV)/sqrt(2),
L = (H + iV)/sqrt(2), chosen so that the target state (|HH> + |VV>)/sqrt(2)
has zero RR and LL coincidence probability.
"""

from __future__ import annotations

import numpy as np

# Default tolerances.  Every operation that checks one of these accepts an
# override keyword, so callers can relax or tighten them per use.
UNITARY_ATOL = 1e-12
HERMITIAN_ATOL = 1e-10
PSD_ATOL = 1e-9
STATE_NORM_ATOL = 1e-12

POLARIZATION_LABELS = ("H", "V", "D", "A", "R", "L")
TWO_PHOTON_BASIS = ("HH", "HV", "VH", "VV")

_SQ2 = np.sqrt(2.0)
_H = np.array([1.0, 0.0], dtype=complex)
_V = np.array([0.0, 1.0], dtype=complex)
_BASIS_VECTORS = {
    "H": _H,
    "V": _V,
    "D": (_H + _V) / _SQ2,
    "A": (_H - _V) / _SQ2,
    "R": (_H - 1j * _V) / _SQ2,
    "L": (_H + 1j * _V) / _SQ2,
}

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def basis_state(label: str) -> np.ndarray:
    """Return the unit Jones vector for one of the labels H, V, D, A, R, L."""
    try:
        vec = _BASIS_VECTORS[label]
    except KeyError:
        raise ValueError(
            f"unknown polarization label {label!r}; expected one of "
            f"{POLARIZATION_LABELS}"
        ) from None
    return vec.copy()


def two_photon_state(label_pair: str) -> np.ndarray:
    """Tensor-product Jones vector for a two-letter label such as 'HV'."""
    if len(label_pair) != 2:
        raise ValueError(f"expected a two-letter label, got {label_pair!r}")
    return np.kron(basis_state(label_pair[0]), basis_state(label_pair[1]))


def bell_state(omega_deg: float = 0.0) -> np.ndarray:
    """The target state (|HH> + e^{i omega}|VV>)/sqrt(2), omega in degrees."""
    phase = np.exp(1j * np.deg2rad(omega_deg))
    ket = np.zeros(4, dtype=complex)
    ket[0] = 1.0
    ket[3] = phase
    return ket / _SQ2


def projector(state: np.ndarray) -> np.ndarray:
    """Rank-1 projector |state><state| (the input is normalized first)."""
    v = np.asarray(state, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def waveplate_operator(theta_deg: float, delta_waves: float) -> np.ndarray:
    """Jones matrix of a linear retarder.

    Parameters
    ----------
    theta_deg : fast-axis angle in degrees, measured from H.
    delta_waves : retardance in waves (0.5 = half-wave, 0.25 = quarter-wave).

    The convention is
    U(theta, delta) = cos(pi delta) I
                      - i sin(pi delta) (cos 2theta sigma_z + sin 2theta sigma_x)
    which is unitary for every theta and delta.
    """
    if delta_waves < 0:
        raise ValueError(f"retardance must be nonnegative, got {delta_waves}")
    half_phase = np.pi * delta_waves
    th = np.deg2rad(theta_deg)
    axis = np.cos(2 * th) * SIGMA_Z + np.sin(2 * th) * SIGMA_X
    return np.cos(half_phase) * np.eye(2, dtype=complex) - 1j * np.sin(half_phase) * axis


def is_unitary(u: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    u = np.asarray(u, dtype=complex)
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol, rtol=0.0))


def is_hermitian(m: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    m = np.asarray(m, dtype=complex)
    return bool(np.allclose(m, m.conj().T, atol=atol, rtol=0.0))


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, atol: float = 1e-10) -> bool:
    """True if two unit vectors agree up to an unobservable global phase."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return bool(abs(abs(np.vdot(a, b)) - 1.0) <= atol)


def eig_hermitian(matrix: np.ndarray, atol: float = HERMITIAN_ATOL):
    """Eigenvalues (descending) and orthonormal eigenvectors of a Hermitian matrix.

    Eigenvector columns are returned in the order of their eigenvalues; ties
    within 1e-12 (relative to the spectral scale) are broken by lexicographic
    order of the phase-fixed eigenvector components so that repeated calls on
    the same input produce identical output.

    Raises ValueError if the input is not Hermitian within ``atol``.
    """
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not is_hermitian(m, atol):
        dev = float(np.max(np.abs(m - m.conj().T)))
        raise ValueError(f"matrix is not Hermitian within {atol} (deviation {dev:.3e})")
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = w[::-1].copy()
    v = v[:, ::-1].copy()

    # Fix each eigenvector's global phase: first significant component real, positive.
    for i in range(v.shape[1]):
        col = v[:, i]
        nz = np.flatnonzero(np.abs(col) > 1e-9)
        if nz.size:
            ref = col[nz[0]]
            v[:, i] = col * (abs(ref) / ref)

    # Deterministic ordering inside (near-)degenerate groups.
    scale = max(1.0, float(np.max(np.abs(w))))
    order = sorted(
        range(len(w)),
        key=lambda i: (
            -round(w[i] / scale, 12),
            tuple(np.round(v[:, i].real, 9)),
            tuple(np.round(v[:, i].imag, 9)),
        ),
    )
    return w[order], v[:, order]


def matrix_sqrt_psd(matrix: np.ndarray, neg_atol: float = PSD_ATOL) -> np.ndarray:
    """Principal square root of a positive semidefinite Hermitian matrix.

    Eigenvalues in [-neg_atol, 0) are treated as numerical noise and clamped
    to zero; anything more negative is rejected.
    """
    w, v = eig_hermitian(matrix)
    if w.min() < -neg_atol:
        raise ValueError(
            f"matrix is not positive semidefinite: eigenvalue {w.min():.3e} "
            f"below -{neg_atol}"
        )
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def clamp_to_physical(matrix: np.ndarray, max_negative: float = np.inf) -> np.ndarray:
    """Project a Hermitian matrix onto the physical states.

    Negative eigenvalues no smaller than ``-max_negative`` are set to zero and
    the result is renormalized to unit trace.  An eigenvalue below
    ``-max_negative`` raises ValueError (it signals a modeling failure rather
    than numerical noise).
    """
    w, v = eig_hermitian(matrix)
    if w.min() < -max_negative:
        raise ValueError(
            f"matrix has eigenvalue {w.min():.4f} below the clamping "
            f"threshold -{max_negative}"
        )
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("matrix has no positive eigenvalues; cannot normalize")
    return (v * (w / total)) @ v.conj().T


def validate_density_matrix(
    rho: np.ndarray,
    hermitian_atol: float = HERMITIAN_ATOL,
    trace_atol: float = 1e-10,
    psd_atol: float = PSD_ATOL,
) -> np.ndarray:
    """Check Hermiticity, unit trace and positivity; return the array as complex."""
    m = np.asarray(rho, dtype=complex)
    if m.shape != (4, 4):
        raise ValueError(f"expected a 4x4 density matrix, got shape {m.shape}")
    if not is_hermitian(m, hermitian_atol):
        raise ValueError("density matrix is not Hermitian within tolerance")
    tr = complex(np.trace(m))
    if abs(tr - 1.0) > trace_atol:
        raise ValueError(f"density matrix trace {tr:.12g} differs from 1")
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if w.min() < -psd_atol:
        raise ValueError(f"density matrix has negative eigenvalue {w.min():.3e}")
    return m
