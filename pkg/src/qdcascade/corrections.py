"""Measurement corrections: dark counts, retardance, laser background.

Three correction entry points, mirroring the order in which they act on the
data:

* dark counts are subtracted at the count level, before reconstruction;
* waveplate retardance is handled by reconstructing with the true-retardance
  projectors (see :mod:`qdcascade.tomography`);
* laser background is removed at the state level by inverting the linear
  admixture rho_measured = k rho + (1 - k) rho_background.

The coincidence background of a polarized laser leak is dominated by
single-arm events (a background photon pairing with a real cascade photon),
with a small both-arm term; :func:`coincidence_background` assembles the
effective two-photon background state and the matching k from the measured
autocorrelation values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import metrics, quantum
from .tomography import (
    ReconstructionOptions,
    TomographyDataset,
    mle_reconstruct,
    monte_carlo_uncertainty,
)

# Eigenvalues of the background-corrected state more negative than this are
# treated as a model failure instead of numerical noise.
CLAMP_THRESHOLD = 0.02


@dataclass(frozen=True)
class DarkCountModel:
    """Detector dark rates and the coincidence acceptance window."""

    dark_rate_hz: float
    coincidence_window_ns: float
    singles_xx_hz: float = 0.0
    singles_x_hz: float = 0.0

    def __post_init__(self) -> None:
        for name in ("dark_rate_hz", "coincidence_window_ns", "singles_xx_hz", "singles_x_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


def accidental_floor(model: DarkCountModel, acquisition_time_s: float) -> float:
    """Expected accidental coincidences from dark counts during one acquisition.

    floor = (singles_xx * dark + singles_x * dark + dark^2) * window * time,
    with the window converted from ns to s.
    """
    if acquisition_time_s < 0:
        raise ValueError(f"acquisition_time_s must be nonnegative, got {acquisition_time_s}")
    dark = model.dark_rate_hz
    rate = model.singles_xx_hz * dark + model.singles_x_hz * dark + dark * dark
    return rate * model.coincidence_window_ns * 1e-9 * acquisition_time_s


def subtract_dark(dataset: TomographyDataset, model: DarkCountModel) -> TomographyDataset:
    """Remove the dark-count accidental floor from every record, clamped at zero.

    Records carrying their own singles rates use those; others fall back to
    the model's rates.
    """
    corrected = []
    for record in dataset.records:
        record_model = DarkCountModel(
            dark_rate_hz=model.dark_rate_hz,
            coincidence_window_ns=model.coincidence_window_ns,
            singles_xx_hz=(
                record.singles_xx_hz if record.singles_xx_hz is not None else model.singles_xx_hz
            ),
            singles_x_hz=(
                record.singles_x_hz if record.singles_x_hz is not None else model.singles_x_hz
            ),
        )
        floor = accidental_floor(record_model, record.acquisition_time_s)
        corrected.append(max(0.0, record.counts - floor))
    return dataset.with_counts(corrected, correction="dark_subtraction")


def background_correct_state(rho_measured: np.ndarray, k: float,
                             bg_state: np.ndarray,
                             clamp_threshold: float = CLAMP_THRESHOLD) -> np.ndarray:
    """Invert the background admixture rho_measured = k rho + (1 - k) bg_state.

    The remainder (rho_measured - (1 - k) bg_state) / k is projected back onto
    the physical states: eigenvalues in [-clamp_threshold, 0) are zeroed and
    the state renormalized.  An eigenvalue below -clamp_threshold raises
    :class:`CorrectionError` naming it.
    """
    if not (0.0 < k <= 1.0):
        raise ValueError(f"k must be in (0, 1], got {k}")
    rho_measured = np.asarray(rho_measured, dtype=complex)
    if k == 1.0:
        return rho_measured.copy()
    bg_state = quantum.validate_density_matrix(bg_state)
    remainder = (rho_measured - (1.0 - k) * bg_state) / k
    try:
        return quantum.clamp_to_physical(remainder, max_negative=clamp_threshold)
    except ValueError as exc:
        raise CorrectionError(
            f"background-corrected state is unphysical: {exc}"
        ) from exc


class CorrectionError(RuntimeError):
    """Raised when a correction produces an unphysical state."""


def _stokes_component(g2: Mapping[str, float], plus: str, minus: str,
                      required: bool) -> float:
    have_plus, have_minus = plus in g2, minus in g2
    if not (have_plus and have_minus):
        if required:
            raise ValueError(f"missing g2 values for the {plus}/{minus} projections")
        return 0.0
    e_plus, e_minus = float(g2[plus]), float(g2[minus])
    if e_plus < 0 or e_minus < 0:
        raise ValueError(f"g2 values must be nonnegative, got {plus}={e_plus}, {minus}={e_minus}")
    total = e_plus + e_minus
    if total == 0.0:
        return 0.0
    return (e_plus - e_minus) / total


def infer_arm_state(g2_per_basis: Mapping[str, float], tol: float = 0.05) -> np.ndarray:
    """Single-arm background polarization from basis-resolved g2 excesses.

    The excess autocorrelation in a projection is proportional to the
    background rate passing that projector, so the count asymmetries of the
    H/V, D/A and R/L pairs estimate the background Stokes vector directly.
    The H/V and D/A pairs are required; a missing R/L pair contributes no
    circular component.  A Stokes vector longer than 1 + ``tol`` (an
    unphysical, negative-eigenvalue arm state) is rejected.
    """
    s1 = _stokes_component(g2_per_basis, "H", "V", required=True)
    s2 = _stokes_component(g2_per_basis, "D", "A", required=True)
    s3 = _stokes_component(g2_per_basis, "R", "L", required=False)
    length = float(np.sqrt(s1 * s1 + s2 * s2 + s3 * s3))
    if length > 1.0 + tol:
        raise ValueError(
            f"inconsistent g2 pattern: inferred Stokes vector has length "
            f"{length:.3f} > 1"
        )
    if length > 1.0:
        s1, s2, s3 = s1 / length, s2 / length, s3 / length
    state = 0.5 * np.eye(2, dtype=complex)
    for s_val, label in ((s1, "H"), (s2, "D"), (s3, "R")):
        axis = 2.0 * quantum.projector(quantum.basis_state(label)) - np.eye(2)
        state = state + 0.5 * s_val * axis
    return state


def infer_bg_state(g2_xx_per_basis: Mapping[str, float],
                   g2_x_per_basis: Mapping[str, float]) -> np.ndarray:
    """Two-photon background state: tensor product of the per-arm inferences."""
    arm_xx = infer_arm_state(g2_xx_per_basis)
    arm_x = infer_arm_state(g2_x_per_basis)
    return np.kron(arm_xx, arm_x)


VERTICAL_ARM = quantum.projector(quantum.basis_state("V"))
UNPOLARIZED_ARM = 0.5 * np.eye(2, dtype=complex)


def coincidence_background(g2_x: float, g2_xx: float,
                           arm_state_xx: Optional[np.ndarray] = None,
                           arm_state_x: Optional[np.ndarray] = None,
                           marginal_xx: Optional[np.ndarray] = None,
                           marginal_x: Optional[np.ndarray] = None
                           ) -> tuple[float, np.ndarray]:
    """Effective coincidence background of a polarized leak in both arms.

    With per-arm background fractions g2_xx and g2_x, the coincidences split
    into source+source (weight k = (1-g2_xx)(1-g2_x)), background+source,
    source+background and background+background events.  The three background
    components combine into one effective two-photon state: a background
    photon pairs with the partner arm's reduced cascade state (I/2 unless
    overridden by ``marginal_*``).

    Returns (k, bg_state) ready for :func:`background_correct_state`.
    """
    k = metrics.k_from_g2(g2_x, g2_xx)
    arm_state_xx = VERTICAL_ARM if arm_state_xx is None else np.asarray(arm_state_xx, complex)
    arm_state_x = VERTICAL_ARM if arm_state_x is None else np.asarray(arm_state_x, complex)
    marginal_xx = UNPOLARIZED_ARM if marginal_xx is None else np.asarray(marginal_xx, complex)
    marginal_x = UNPOLARIZED_ARM if marginal_x is None else np.asarray(marginal_x, complex)
    if k >= 1.0:
        return 1.0, np.eye(4, dtype=complex) / 4.0
    w_bg_source = g2_xx * (1.0 - g2_x)       # background XX photon, real X photon
    w_source_bg = (1.0 - g2_xx) * g2_x       # real XX photon, background X photon
    w_bg_bg = g2_xx * g2_x
    bg = (
        w_bg_source * np.kron(arm_state_xx, marginal_x)
        + w_source_bg * np.kron(marginal_xx, arm_state_x)
        + w_bg_bg * np.kron(arm_state_xx, arm_state_x)
    ) / (1.0 - k)
    return k, bg


@dataclass(frozen=True)
class BackgroundModel:
    """Measured laser-background characterization and the derived fractions."""

    g2_xx_per_basis: Mapping[str, float]
    g2_x_per_basis: Mapping[str, float]
    bg_state: np.ndarray
    k_linear: float
    k_basiswise: Mapping[str, float]

    def to_document(self) -> dict:
        return {
            "g2_xx_per_basis": dict(self.g2_xx_per_basis),
            "g2_x_per_basis": dict(self.g2_x_per_basis),
            "bg_state": {
                "re": np.asarray(self.bg_state).real.tolist(),
                "im": np.asarray(self.bg_state).imag.tolist(),
            },
            "k_linear": self.k_linear,
            "k_basiswise": dict(self.k_basiswise),
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "BackgroundModel":
        bg = np.asarray(doc["bg_state"]["re"]) + 1j * np.asarray(doc["bg_state"]["im"])
        return cls(
            g2_xx_per_basis=dict(doc["g2_xx_per_basis"]),
            g2_x_per_basis=dict(doc["g2_x_per_basis"]),
            bg_state=bg,
            k_linear=float(doc["k_linear"]),
            k_basiswise=dict(doc["k_basiswise"]),
        )

    @classmethod
    def from_g2(cls, g2_xx_per_basis: Mapping[str, float],
                g2_x_per_basis: Mapping[str, float]) -> "BackgroundModel":
        bg_state = infer_bg_state(g2_xx_per_basis, g2_x_per_basis)
        g2_xx_lin = 0.5 * (g2_xx_per_basis["H"] + g2_xx_per_basis["V"])
        g2_x_lin = 0.5 * (g2_x_per_basis["H"] + g2_x_per_basis["V"])
        k_linear = metrics.k_from_g2(g2_x_lin, g2_xx_lin)
        common = sorted(set(g2_xx_per_basis) & set(g2_x_per_basis))
        k_basiswise = {
            label: metrics.k_from_g2(g2_x_per_basis[label], g2_xx_per_basis[label])
            for label in common
        }
        return cls(
            g2_xx_per_basis=dict(g2_xx_per_basis),
            g2_x_per_basis=dict(g2_x_per_basis),
            bg_state=bg_state,
            k_linear=k_linear,
            k_basiswise=k_basiswise,
        )


@dataclass(frozen=True)
class CorrectionStage:
    """One step of the correction chain: the state and its metrics."""

    name: str
    rho: np.ndarray
    metrics: metrics.EntanglementMetrics


def evaluate_metrics(rho: np.ndarray,
                     dataset: Optional[TomographyDataset] = None,
                     transform=None,
                     mc_trials: int = 0, seed: int = 0,
                     n0: Optional[float] = None,
                     jobs: int = 1) -> metrics.EntanglementMetrics:
    """Entanglement metrics of a state, with optional Poisson Monte-Carlo errors.

    When ``mc_trials`` > 0 and a dataset is provided, each metric's
    uncertainty is the Monte-Carlo spread of ``metric(transform(rho_trial))``
    over Poisson-resampled reconstructions of the dataset.
    """
    transform = transform or (lambda r: r)
    fid = metrics.fidelity_to_bell(rho)
    con = metrics.concurrence(rho)
    top = metrics.largest_eigenvalue(rho)
    errors = {"fidelity": None, "concurrence": None, "largest_eigenvalue": None}
    if mc_trials and dataset is not None:
        for name, metric in (
            ("fidelity", metrics.fidelity_to_bell),
            ("concurrence", metrics.concurrence),
            ("largest_eigenvalue", metrics.largest_eigenvalue),
        ):
            result = monte_carlo_uncertainty(
                dataset, lambda r, m=metric: m(transform(r)),
                trials=mc_trials, seed=seed, n0=n0, jobs=jobs,
            )
            errors[name] = result.std
    return metrics.EntanglementMetrics(
        fidelity=fid, concurrence=con, largest_eigenvalue=top,
        fidelity_err=errors["fidelity"],
        concurrence_err=errors["concurrence"],
        largest_eigenvalue_err=errors["largest_eigenvalue"],
    )


def run_correction_chain(dataset: TomographyDataset,
                         dark_model: Optional[DarkCountModel] = None,
                         g2_x: Optional[float] = None,
                         g2_xx: Optional[float] = None,
                         bg_state: Optional[np.ndarray] = None,
                         options: Optional[ReconstructionOptions] = None,
                         n0: Optional[float] = None,
                         mc_trials: int = 0,
                         seed: int = 0,
                         jobs: int = 1) -> list[CorrectionStage]:
    """The full analysis ladder: raw, dark-subtracted, retardance-aware, background-corrected.

    The raw and dark-subtracted stages reconstruct with ideal-retardance
    projectors at the recorded angles; the retardance-aware stage uses the
    settings exactly as recorded in the dataset.  The background stage inverts
    the laser admixture with k from the g2 pair and ``bg_state`` (defaulting
    to the vertical-laser coincidence background).  ``mc_trials`` > 0 adds
    Poisson Monte-Carlo uncertainties to every stage.
    """
    options = options or ReconstructionOptions()
    stages: list[CorrectionStage] = []

    ideal_settings = [s.with_retardances(0.5, 0.25) for s in dataset.settings()]
    raw_dataset = dataset.with_settings(ideal_settings)
    rho_raw = mle_reconstruct(raw_dataset, options=options, n0=n0)
    stages.append(CorrectionStage(
        "raw", rho_raw,
        evaluate_metrics(rho_raw, raw_dataset, lambda r: r, mc_trials, seed, n0, jobs),
    ))

    dark_dataset = dataset
    if dark_model is not None:
        dark_dataset = subtract_dark(dataset, dark_model)
        dark_ideal = dark_dataset.with_settings(ideal_settings)
        rho_dark = mle_reconstruct(dark_ideal, options=options, n0=n0)
        stages.append(CorrectionStage(
            "dark_subtracted", rho_dark,
            evaluate_metrics(rho_dark, dark_ideal, lambda r: r, mc_trials, seed + 1, n0, jobs),
        ))

    rho_ret = mle_reconstruct(dark_dataset, options=options, n0=n0)
    stages.append(CorrectionStage(
        "retardance_aware", rho_ret,
        evaluate_metrics(rho_ret, dark_dataset, lambda r: r, mc_trials, seed + 2, n0, jobs),
    ))

    if g2_x is not None and g2_xx is not None:
        if bg_state is None:
            k, bg_state = coincidence_background(g2_x, g2_xx)
        else:
            k = metrics.k_from_g2(g2_x, g2_xx)
        correct = lambda r: background_correct_state(r, k, bg_state)
        rho_bg = correct(rho_ret)
        stages.append(CorrectionStage(
            "background_corrected", rho_bg,
            evaluate_metrics(rho_bg, dark_dataset, correct, mc_trials, seed + 3, n0, jobs),
        ))
    return stages
