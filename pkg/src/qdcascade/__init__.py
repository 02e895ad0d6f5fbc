"""Polarization-entangled photon-pair cascade modeling and tomography toolkit."""

__version__ = "0.1.0"

from .cascade import (
    CascadeParams,
    HBAR_UEV_NS,
    MU_B_UEV_PER_T,
    fluctuation_averaged_fidelity,
    fss_from_overhauser,
    fss_sigma,
    model_fidelity,
    overhauser_sigma,
    purcell_projected_fidelity,
    spin_preserved_fraction,
    time_averaged_state,
)
from .corrections import (
    BackgroundModel,
    CorrectionError,
    DarkCountModel,
    accidental_floor,
    background_correct_state,
    coincidence_background,
    infer_arm_state,
    infer_bg_state,
    run_correction_chain,
    subtract_dark,
)
from .fitting import (
    DeviationResult,
    FitError,
    FitResult,
    FssFidelityPoint,
    background_corrected_points,
    dephasing_free_deviation,
    fit_fss_curve,
    model_curve,
)
from .metrics import (
    EntanglementMetrics,
    Visibilities,
    best_phase_fidelity,
    concurrence,
    fidelity_to_bell,
    k_from_g2,
    largest_eigenvalue,
    visibilities_from_counts,
    visibilities_from_state,
    visibility_fidelity,
)
from .quantum import (
    basis_state,
    bell_state,
    eig_hermitian,
    matrix_sqrt_psd,
    waveplate_operator,
)
from .tomography import (
    CoincidenceRecord,
    MeasurementSetting,
    MonteCarloResult,
    ReconstructionError,
    ReconstructionOptions,
    TomographyDataset,
    linear_reconstruct,
    mle_reconstruct,
    monte_carlo_uncertainty,
    predict_counts,
    projector_for_setting,
    sample_dataset,
    standard_settings,
)

__all__ = [name for name in dir() if not name.startswith("_")]
