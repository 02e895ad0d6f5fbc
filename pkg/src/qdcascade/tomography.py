"""Coincidence tomography: settings, forward model, sampling, reconstruction.

A measurement setting is a pair of waveplate configurations (one per
detection arm), each consisting of a quarter-wave plate followed by a
half-wave plate in front of an H polarizer.  Projectors are built from the
true waveplate retardances, so systematic retardance errors can be both
simulated and corrected for.

Reconstruction is maximum likelihood over the Cholesky-style parametrization
rho = T^dag T / Tr(T^dag T) with T lower triangular (16 real parameters),
minimizing sum_nu (N p_nu - n_nu)^2 / (2 N p_nu); linear inversion provides
the starting point.  Counting-statistics uncertainties come from Poisson
resampling of the recorded counts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.optimize

from . import quantum

IDEAL_HWP_RETARDANCE = 0.5
IDEAL_QWP_RETARDANCE = 0.25

# Waveplate angles (hwp_deg, qwp_deg) realizing each projection basis with
# ideal retardances; the arrangement is QWP then HWP in front of an H
# polarizer.  Consistency with the labeled bases is enforced by tests rather
# than assumed.
WAVEPLATE_ANGLES = {
    "H": (0.0, 0.0),
    "V": (45.0, 0.0),
    "D": (22.5, 45.0),
    "A": (-22.5, -45.0),
    "R": (22.5, 0.0),
    "L": (-22.5, 0.0),
}

FULL36_LABELS = tuple(
    a + b for a, b in itertools.product(quantum.POLARIZATION_LABELS, repeat=2)
)
REDUCED6_LABELS = ("HH", "HV", "DD", "DA", "RR", "RL")
MINIMAL16_LABELS = (
    "HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH",
    "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL",
)

# Smallest acceptable singular value of the design matrix for a dataset to
# count as tomographically complete.
COMPLETENESS_MIN_SV = 1e-6

_BASIS_PAIRS = (("H", "V"), ("D", "A"), ("R", "L"))


@dataclass(frozen=True)
class MeasurementSetting:
    """Waveplate configuration of both arms for one projective setting."""

    label: str
    hwp_xx_deg: float
    qwp_xx_deg: float
    hwp_x_deg: float
    qwp_x_deg: float
    hwp_retardance_xx: float = IDEAL_HWP_RETARDANCE
    qwp_retardance_xx: float = IDEAL_QWP_RETARDANCE
    hwp_retardance_x: float = IDEAL_HWP_RETARDANCE
    qwp_retardance_x: float = IDEAL_QWP_RETARDANCE

    def __post_init__(self) -> None:
        for name in (
            "hwp_retardance_xx", "qwp_retardance_xx",
            "hwp_retardance_x", "qwp_retardance_x",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def with_retardances(self, hwp: float, qwp: float) -> "MeasurementSetting":
        return replace(
            self,
            hwp_retardance_xx=hwp, qwp_retardance_xx=qwp,
            hwp_retardance_x=hwp, qwp_retardance_x=qwp,
        )


@dataclass(frozen=True)
class CoincidenceRecord:
    """One coincidence measurement: a setting and its recorded counts."""

    setting: MeasurementSetting
    counts: float
    acquisition_time_s: float = 1.0
    singles_xx_hz: Optional[float] = None
    singles_x_hz: Optional[float] = None

    def __post_init__(self) -> None:
        if self.counts < 0:
            raise ValueError(f"counts must be nonnegative, got {self.counts}")
        if self.acquisition_time_s <= 0:
            raise ValueError(
                f"acquisition_time_s must be positive, got {self.acquisition_time_s}"
            )


@dataclass(frozen=True)
class TomographyDataset:
    """A set of coincidence records plus detector-level metadata."""

    records: tuple[CoincidenceRecord, ...]
    dark_rate_hz: float = 0.0
    coincidence_window_ns: float = 0.0
    corrections_applied: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        labels = [r.setting.label for r in self.records]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise ValueError(f"duplicate setting labels in dataset: {dupes}")
        if self.dark_rate_hz < 0 or self.coincidence_window_ns < 0:
            raise ValueError("dark rate and coincidence window must be nonnegative")

    def labels(self) -> tuple[str, ...]:
        return tuple(r.setting.label for r in self.records)

    def settings(self) -> tuple[MeasurementSetting, ...]:
        return tuple(r.setting for r in self.records)

    def counts(self) -> np.ndarray:
        return np.array([r.counts for r in self.records], dtype=float)

    def with_counts(self, counts: Sequence[float], correction: str | None = None) -> "TomographyDataset":
        if len(counts) != len(self.records):
            raise ValueError("count vector length does not match the record list")
        records = tuple(
            replace(record, counts=float(value))
            for record, value in zip(self.records, counts)
        )
        applied = self.corrections_applied + ((correction,) if correction else ())
        return replace(self, records=records, corrections_applied=applied)

    def with_settings(self, settings: Sequence[MeasurementSetting]) -> "TomographyDataset":
        if len(settings) != len(self.records):
            raise ValueError("settings length does not match the record list")
        records = tuple(
            replace(record, setting=setting)
            for record, setting in zip(self.records, settings)
        )
        return replace(self, records=records)


@dataclass(frozen=True)
class ReconstructionOptions:
    """Optimizer contract for the maximum-likelihood reconstruction."""

    tolerance: float = 1e-10
    max_iterations: int = 1000
    multistart: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.multistart < 1:
            raise ValueError(f"multistart must be at least 1, got {self.multistart}")


class ReconstructionError(RuntimeError):
    """Raised when the likelihood optimizer fails; carries the best iterate."""

    def __init__(self, message: str, best_rho: Optional[np.ndarray] = None,
                 diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.best_rho = best_rho
        self.diagnostics = diagnostics or {}


def projection_state(hwp_deg: float, qwp_deg: float,
                     hwp_retardance: float, qwp_retardance: float) -> np.ndarray:
    """Jones vector projected on by one arm's waveplate stack.

    Light traverses the QWP, then the HWP, then an H polarizer, so the
    detected amplitude is <H| U_hwp U_qwp |psi> and the projection state is
    (U_hwp U_qwp)^dag |H>.
    """
    u_h = quantum.waveplate_operator(hwp_deg, hwp_retardance)
    u_q = quantum.waveplate_operator(qwp_deg, qwp_retardance)
    return (u_h @ u_q).conj().T @ quantum.basis_state("H")


def projector_for_setting(setting: MeasurementSetting) -> np.ndarray:
    """Rank-1 two-photon projector realized by a measurement setting."""
    p_xx = projection_state(
        setting.hwp_xx_deg, setting.qwp_xx_deg,
        setting.hwp_retardance_xx, setting.qwp_retardance_xx,
    )
    p_x = projection_state(
        setting.hwp_x_deg, setting.qwp_x_deg,
        setting.hwp_retardance_x, setting.qwp_retardance_x,
    )
    return np.kron(quantum.projector(p_xx), quantum.projector(p_x))


def setting_for_label(label: str,
                      hwp_retardance: float = IDEAL_HWP_RETARDANCE,
                      qwp_retardance: float = IDEAL_QWP_RETARDANCE) -> MeasurementSetting:
    """Measurement setting realizing a nominal basis pair such as 'DR'."""
    if len(label) != 2 or any(ch not in WAVEPLATE_ANGLES for ch in label):
        raise ValueError(f"invalid basis-pair label {label!r}")
    hwp_xx, qwp_xx = WAVEPLATE_ANGLES[label[0]]
    hwp_x, qwp_x = WAVEPLATE_ANGLES[label[1]]
    return MeasurementSetting(
        label=label,
        hwp_xx_deg=hwp_xx, qwp_xx_deg=qwp_xx,
        hwp_x_deg=hwp_x, qwp_x_deg=qwp_x,
        hwp_retardance_xx=hwp_retardance, qwp_retardance_xx=qwp_retardance,
        hwp_retardance_x=hwp_retardance, qwp_retardance_x=qwp_retardance,
    )


def standard_settings(kind: str = "full36",
                      hwp_retardance: float = IDEAL_HWP_RETARDANCE,
                      qwp_retardance: float = IDEAL_QWP_RETARDANCE
                      ) -> list[MeasurementSetting]:
    """Standard measurement sets: 'full36', 'reduced6' or 'minimal16'."""
    try:
        labels = {
            "full36": FULL36_LABELS,
            "reduced6": REDUCED6_LABELS,
            "minimal16": MINIMAL16_LABELS,
        }[kind]
    except KeyError:
        raise ValueError(
            f"unknown settings kind {kind!r}; expected 'full36', 'reduced6' "
            f"or 'minimal16'"
        ) from None
    return [setting_for_label(label, hwp_retardance, qwp_retardance) for label in labels]


def _hermitian_basis() -> np.ndarray:
    """Orthonormal (Frobenius) basis of the 4x4 Hermitian operators."""
    basis = []
    for i in range(4):
        b = np.zeros((4, 4), dtype=complex)
        b[i, i] = 1.0
        basis.append(b)
    for i in range(4):
        for j in range(i + 1, 4):
            b = np.zeros((4, 4), dtype=complex)
            b[i, j] = b[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(b)
            b = np.zeros((4, 4), dtype=complex)
            b[i, j] = -1j / np.sqrt(2.0)
            b[j, i] = 1j / np.sqrt(2.0)
            basis.append(b)
    return np.array(basis)


_HERMITIAN_BASIS = _hermitian_basis()


def design_matrix(settings: Iterable[MeasurementSetting]) -> np.ndarray:
    """Real matrix mapping Hermitian-basis coefficients to setting probabilities."""
    projs = np.array([projector_for_setting(s) for s in settings])
    return np.real(np.einsum("nij,kji->nk", projs, _HERMITIAN_BASIS))


def smallest_design_singular_value(settings: Iterable[MeasurementSetting]) -> float:
    matrix = design_matrix(settings)
    if matrix.shape[0] < 16:
        return 0.0
    return float(np.linalg.svd(matrix, compute_uv=False)[-1])


def check_complete(dataset: TomographyDataset) -> None:
    """Raise ValueError naming missing settings if the dataset cannot span state space."""
    sv = smallest_design_singular_value(dataset.settings())
    if sv <= COMPLETENESS_MIN_SV:
        present = set(dataset.labels())
        missing = [l for l in MINIMAL16_LABELS if l not in present]
        raise ValueError(
            "dataset is not tomographically complete (smallest design singular "
            f"value {sv:.2e}); missing settings such as: {', '.join(missing) or 'none'}"
        )


def predict_counts(rho: np.ndarray, settings: Iterable[MeasurementSetting],
                   n0: float) -> np.ndarray:
    """Expected coincidences N0 * Tr(P_nu rho) for each setting."""
    if n0 < 0:
        raise ValueError(f"n0 must be nonnegative, got {n0}")
    rho = quantum.validate_density_matrix(rho)
    projs = np.array([projector_for_setting(s) for s in settings])
    # Clip the roundoff of exactly-zero probabilities.
    return n0 * np.clip(np.real(np.einsum("nij,ji->n", projs, rho)), 0.0, None)


def sample_dataset(rho: np.ndarray, settings: Sequence[MeasurementSetting],
                   n0: float, seed: int,
                   dark_rate_hz: float = 0.0,
                   coincidence_window_ns: float = 0.0,
                   acquisition_time_s: float = 1.0,
                   singles_xx_hz: float = 0.0,
                   singles_x_hz: float = 0.0) -> TomographyDataset:
    """Draw Poisson coincidence counts for every setting.

    Counts are Poisson(N0 Tr(P_nu rho) + accidental floor); the floor is the
    dark-count accidental rate of :func:`qdcascade.corrections.accidental_floor`.
    The draw is deterministic for a fixed seed.
    """
    from .corrections import DarkCountModel, accidental_floor

    expected = predict_counts(rho, settings, n0)
    model = DarkCountModel(
        dark_rate_hz=dark_rate_hz,
        coincidence_window_ns=coincidence_window_ns,
        singles_xx_hz=singles_xx_hz,
        singles_x_hz=singles_x_hz,
    )
    floor = accidental_floor(model, acquisition_time_s)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(expected + floor)
    records = tuple(
        CoincidenceRecord(
            setting=setting,
            counts=float(c),
            acquisition_time_s=acquisition_time_s,
            singles_xx_hz=singles_xx_hz or None,
            singles_x_hz=singles_x_hz or None,
        )
        for setting, c in zip(settings, counts)
    )
    return TomographyDataset(
        records=records,
        dark_rate_hz=dark_rate_hz,
        coincidence_window_ns=coincidence_window_ns,
    )


def estimate_pairs_per_setting(dataset: TomographyDataset) -> float:
    """Pair production per setting from complete orthogonal basis quadruples.

    For every two-arm basis pair whose four co/cross combinations are all
    present (for example HH, HV, VH, VV) the counts sum to the produced pairs;
    the estimate is the mean over all complete quadruples.
    """
    table = {r.setting.label: float(r.counts) for r in dataset.records}
    sums = []
    for (a1, a2), (b1, b2) in itertools.product(_BASIS_PAIRS, repeat=2):
        quad = [a1 + b1, a1 + b2, a2 + b1, a2 + b2]
        if all(label in table for label in quad):
            sums.append(sum(table[label] for label in quad))
    if not sums:
        raise ValueError(
            "cannot estimate pairs per setting: no complete basis quadruple in "
            "the dataset; pass an explicit n0"
        )
    return float(np.mean(sums))


def linear_reconstruct(dataset: TomographyDataset, n0: Optional[float] = None) -> np.ndarray:
    """Least-squares inversion of the Born rule; Hermitian and trace 1, possibly not PSD."""
    check_complete(dataset)
    n_pairs = float(n0) if n0 is not None else estimate_pairs_per_setting(dataset)
    projs = np.array([projector_for_setting(s) for s in dataset.settings()])
    a = projs.transpose(0, 2, 1).reshape(len(projs), 16)
    b = dataset.counts() / n_pairs
    x, *_ = np.linalg.lstsq(a, b.astype(complex), rcond=None)
    rho = x.reshape(4, 4)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.real(np.trace(rho))


# Lower-triangular parameter layout: 4 real diagonal entries, then
# (real, imaginary) pairs for each below-diagonal entry.
_PARAM_ENTRIES: list[tuple[int, int, complex]] = (
    [(i, i, 1.0 + 0j) for i in range(4)]
    + [
        entry
        for (i, j) in ((1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2))
        for entry in ((i, j, 1.0 + 0j), (i, j, 1j))
    ]
)
_PARAM_ROWS = np.array([a for a, _, _ in _PARAM_ENTRIES])
_PARAM_COLS = np.array([b for _, b, _ in _PARAM_ENTRIES])
_PARAM_COEFFS = np.array([c for _, _, c in _PARAM_ENTRIES])


def _t_to_matrix(t: np.ndarray) -> np.ndarray:
    m = np.zeros((4, 4), dtype=complex)
    np.add.at(m, (_PARAM_ROWS, _PARAM_COLS), _PARAM_COEFFS * t)
    return m


def _rho_from_t(t: np.ndarray) -> np.ndarray:
    m = _t_to_matrix(t)
    prod = m.conj().T @ m
    return prod / np.real(np.trace(prod))


def _t_from_rho(rho: np.ndarray) -> np.ndarray:
    """Parameters of a lower-triangular T with T^dag T proportional to rho."""
    eps = 1e-9
    rho_pd = (1.0 - eps) * np.asarray(rho, dtype=complex) + eps * np.eye(4) / 4.0
    rho_pd = 0.5 * (rho_pd + rho_pd.conj().T)
    flip = np.fliplr(np.eye(4))
    chol = np.linalg.cholesky(flip @ rho_pd @ flip)
    t_mat = flip @ chol.conj().T @ flip
    t = np.empty(16)
    for k, (a, b, c) in enumerate(_PARAM_ENTRIES):
        t[k] = t_mat[a, b].real if c == 1.0 else t_mat[a, b].imag
    return t


def _make_objective(projs: np.ndarray, counts: np.ndarray, n_pairs: float,
                    floor: float = 0.5) -> Callable:
    def objective(t: np.ndarray):
        t_mat = _t_to_matrix(t)
        t_dag = t_mat.conj().T
        m_mat = t_dag @ t_mat
        tau = float(np.real(np.trace(m_mat)))
        rho = m_mat / tau
        p = np.real(np.einsum("nij,ji->n", projs, rho))
        m = n_pairs * p
        # Zero predicted counts are floored in the denominator only.
        denom = np.maximum(m, floor)
        resid = m - counts
        value = float(np.sum(resid * resid / (2.0 * denom)))
        active = m > floor
        d_dm = resid / denom
        d_dm[active] -= resid[active] ** 2 / (2.0 * denom[active] ** 2)
        w = projs @ t_dag
        dq = 2.0 * np.real(_PARAM_COEFFS[None, :] * w[:, _PARAM_COLS, _PARAM_ROWS])
        dtau = 2.0 * np.real(_PARAM_COEFFS * t_dag[_PARAM_COLS, _PARAM_ROWS])
        dp = (dq - np.outer(p, dtau)) / tau
        grad = (d_dm * n_pairs) @ dp
        return value, grad

    return objective


def mle_reconstruct(dataset: TomographyDataset,
                    options: Optional[ReconstructionOptions] = None,
                    n0: Optional[float] = None) -> np.ndarray:
    """Maximum-likelihood density matrix of a tomographically complete dataset.

    The result is physical (Hermitian, unit trace, positive semidefinite) by
    construction and its likelihood never exceeds the likelihood of the
    initialization point (the physicality-projected linear inversion).
    Raises :class:`ReconstructionError` with the best iterate if no optimizer
    start converges.
    """
    options = options or ReconstructionOptions()
    check_complete(dataset)
    n_pairs = float(n0) if n0 is not None else estimate_pairs_per_setting(dataset)
    projs = np.array([projector_for_setting(s) for s in dataset.settings()])
    counts = dataset.counts()
    objective = _make_objective(projs, counts, n_pairs)

    rho_init = quantum.clamp_to_physical(linear_reconstruct(dataset, n0=n_pairs))
    t_init = _t_from_rho(rho_init)
    rng = np.random.default_rng(options.seed)
    starts = [t_init]
    scale = float(np.linalg.norm(t_init))
    for _ in range(options.multistart - 1):
        starts.append(t_init + 0.05 * scale * rng.standard_normal(16))

    init_value = objective(t_init)[0]
    best_t, best_value, any_converged = t_init, init_value, False
    for start in starts:
        result = scipy.optimize.minimize(
            objective, start, jac=True, method="L-BFGS-B",
            options={
                "ftol": options.tolerance,
                "gtol": 1e-12,
                "maxiter": options.max_iterations,
                "maxfun": 50 * options.max_iterations,
            },
        )
        if result.success:
            any_converged = True
        if result.fun < best_value:
            best_value, best_t = float(result.fun), result.x
    if not any_converged and best_value >= init_value:
        raise ReconstructionError(
            f"likelihood optimizer failed to converge within "
            f"{options.max_iterations} iterations from {len(starts)} starts",
            best_rho=_rho_from_t(best_t),
            diagnostics={"likelihood": best_value, "initial_likelihood": init_value},
        )
    return _rho_from_t(best_t)


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    std: float
    n_trials: int
    n_failed: int
    values: tuple[float, ...] = ()


def _mc_trial(args) -> Optional[np.ndarray]:
    """One Poisson-resampled reconstruction (module level so pools can run it)."""
    dataset, options, n0, child_seed = args
    rng = np.random.default_rng(child_seed)
    resampled = dataset.with_counts(
        rng.poisson(np.maximum(dataset.counts(), 0.0)).astype(float))
    try:
        return mle_reconstruct(resampled, options=options, n0=n0)
    except ReconstructionError:
        return None


def monte_carlo_uncertainty(dataset: TomographyDataset,
                            metric: Callable[[np.ndarray], float],
                            trials: int = 100,
                            seed: int = 0,
                            options: Optional[ReconstructionOptions] = None,
                            n0: Optional[float] = None,
                            jobs: int = 1) -> MonteCarloResult:
    """Counting-statistics uncertainty of a density-matrix metric.

    Every trial redraws each recorded count as Poisson(observed count),
    reruns the maximum-likelihood reconstruction and evaluates ``metric``;
    the sample mean and standard deviation over trials are returned.  The
    per-trial random generators are split from the master seed, so the result
    does not depend on execution order (``jobs`` > 1 runs trials in a process
    pool and yields the same values as a serial run).  Trials whose
    reconstruction fails are dropped; more than 10% failures raise
    :class:`ReconstructionError`.
    """
    if trials < 2:
        raise ValueError(f"trials must be at least 2, got {trials}")
    if jobs < 1:
        raise ValueError(f"jobs must be at least 1, got {jobs}")
    if options is None:
        options = ReconstructionOptions(multistart=1)
    work = [(dataset, options, n0, child) for child in np.random.SeedSequence(seed).spawn(trials)]
    if jobs == 1:
        states = [_mc_trial(item) for item in work]
    else:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            states = list(pool.map(_mc_trial, work, chunksize=max(1, trials // (4 * jobs))))
    values = [float(metric(rho)) for rho in states if rho is not None]
    n_failed = trials - len(values)
    if n_failed > 0.1 * trials:
        raise ReconstructionError(
            f"{n_failed} of {trials} Monte-Carlo reconstructions failed"
        )
    arr = np.array(values)
    return MonteCarloResult(
        mean=float(arr.mean()),
        std=float(arr.std(ddof=1)),
        n_trials=trials,
        n_failed=n_failed,
        values=tuple(arr.tolist()),
    )
