"""Fidelity-versus-splitting model curves and the spin-scattering-time fit.

The fit holds the exciton lifetime and the single-emitter fraction fixed and
determines the spin-scattering time (and optionally the setup phase) from
measured fidelity points by weighted least squares.  Internally the rate
1/tau_ss is fitted instead of tau_ss itself, which keeps the objective nearly
linear and lets an infinite scattering time sit at the rate-zero boundary.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

from . import cascade, metrics, quantum

ESTIMATORS = ("dm_fidelity", "visibility_fidelity")

_MULTISTART_TAU_SS_NS = (1.0, 10.0, 100.0)
_MULTISTART_OMEGA_DEG = (-20.0, 0.0, 20.0)


@dataclass(frozen=True)
class FssFidelityPoint:
    """One measured fidelity at a given fine-structure splitting."""

    s_ueV: float
    fidelity: float
    sigma_f: float

    def __post_init__(self) -> None:
        if not (self.sigma_f > 0):
            raise ValueError(f"sigma_f must be positive, got {self.sigma_f}")


@dataclass(frozen=True)
class FitResult:
    """Fitted spin-scattering time (and setup phase) with uncertainties.

    ``covariance`` is over the internal fit parameters (rate = 1/tau_ss in
    1/ns, then omega in degrees when fitted); tau_ss errors are propagated
    from the rate by the delta method and become infinite at the rate-zero
    boundary (an unbounded scattering time).
    """

    tau_ss_ns: float
    tau_ss_err_ns: float
    rate_per_ns: float
    rate_err_per_ns: float
    omega_deg: Optional[float]
    omega_err_deg: Optional[float]
    chi_squared: float
    dof: int
    residuals: tuple[float, ...]
    covariance: tuple[tuple[float, ...], ...]
    n_points: int

    def to_dict(self) -> dict:
        return {
            "tau_ss_ns": self.tau_ss_ns,
            "tau_ss_err_ns": self.tau_ss_err_ns,
            "rate_per_ns": self.rate_per_ns,
            "rate_err_per_ns": self.rate_err_per_ns,
            "omega_deg": self.omega_deg,
            "omega_err_deg": self.omega_err_deg,
            "chi_squared": self.chi_squared,
            "dof": self.dof,
            "residuals": list(self.residuals),
            "covariance": [list(row) for row in self.covariance],
            "n_points": self.n_points,
        }


class FitError(RuntimeError):
    """Raised when the least-squares fit fails; carries the best iterate."""

    def __init__(self, message: str, best_params: Optional[np.ndarray] = None):
        super().__init__(message)
        self.best_params = best_params


_REDUCED6_KET_CACHE: Optional[np.ndarray] = None


def _reduced6_kets() -> np.ndarray:
    global _REDUCED6_KET_CACHE
    if _REDUCED6_KET_CACHE is None:
        _REDUCED6_KET_CACHE = np.array(
            [quantum.two_photon_state(label) for label in metrics.REDUCED6_LABELS]
        )
    return _REDUCED6_KET_CACHE


def _emitted_states(s_abs: np.ndarray, tau1_ps: float, tau_ss_ns: float,
                    k: float, omega_deg: float) -> np.ndarray:
    """Batch of emitted states over a splitting grid, unpolarized background.

    Identical to :func:`qdcascade.cascade.time_averaged_state` evaluated per
    splitting (a unit test pins the equivalence); vectorized for the fit loop.
    """
    g = cascade.spin_preserved_fraction(tau1_ps, tau_ss_ns)
    c = np.atleast_1d(cascade.coherence(s_abs, tau1_ps, tau_ss_ns, omega_deg))
    n = c.shape[0]
    rho = np.zeros((n, 4, 4), dtype=complex)
    diag_outer = k * g * 0.5 + k * (1.0 - g) * 0.25 + (1.0 - k) * 0.25
    diag_inner = k * (1.0 - g) * 0.25 + (1.0 - k) * 0.25
    rho[:, 0, 0] = rho[:, 3, 3] = diag_outer
    rho[:, 1, 1] = rho[:, 2, 2] = diag_inner
    rho[:, 3, 0] = k * g * 0.5 * c
    rho[:, 0, 3] = np.conj(rho[:, 3, 0])
    return rho


def model_curve(s_ueV, tau1_ps: float, tau_ss_ns: float, k: float,
                omega_deg: float = 0.0,
                estimator: str = "visibility_fidelity"):
    """Predicted fidelity at a splitting S for the chosen estimator.

    ``dm_fidelity`` evaluates the Bell-state overlap of the emitted state;
    ``visibility_fidelity`` evaluates the three-basis visibility formula on
    the Born-rule coincidence probabilities of the same state, which is what
    a six-setting measurement estimates.  The splitting enters by magnitude,
    so the curve is even in S.  Accepts a scalar or an array of splittings.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    s_arr = np.abs(np.atleast_1d(np.asarray(s_ueV, dtype=float)))
    rhos = _emitted_states(s_arr, tau1_ps, tau_ss_ns, k, omega_deg)
    if estimator == "dm_fidelity":
        target = quantum.bell_state()
        values = np.real(np.einsum("i,nij,j->n", target.conj(), rhos, target))
    else:
        kets = _reduced6_kets()
        probs = np.real(np.einsum("ki,nij,kj->nk", kets.conj(), rhos, kets))
        c_lin = (probs[:, 0] - probs[:, 1]) / (probs[:, 0] + probs[:, 1])
        c_diag = (probs[:, 2] - probs[:, 3]) / (probs[:, 2] + probs[:, 3])
        c_circ = (probs[:, 4] - probs[:, 5]) / (probs[:, 4] + probs[:, 5])
        values = 0.25 * (1.0 + c_lin + c_diag - c_circ)
    if np.ndim(s_ueV) == 0:
        return float(values[0])
    return values


def _curve_from_rate(s_values: np.ndarray, rate_per_ns: float, omega_deg: float,
                     tau1_ps: float, k: float, estimator: str) -> np.ndarray:
    tau_ss = math.inf if rate_per_ns == 0.0 else 1.0 / rate_per_ns
    return np.asarray(model_curve(s_values, tau1_ps, tau_ss, k, omega_deg, estimator))


def _validate_points(points: Sequence[FssFidelityPoint]) -> None:
    if len(points) < 3:
        raise ValueError(f"need at least 3 points, got {len(points)}")
    s_abs = np.abs([p.s_ueV for p in points])
    if len(np.unique(np.round(s_abs, 6))) < 3:
        raise ValueError("degenerate spread of S values: fewer than 3 distinct |S|")
    if s_abs.min() > 1.0 or s_abs.max() < 2.0:
        raise ValueError(
            "points must span the splitting axis: need at least one point with "
            "|S| <= 1 ueV and one with |S| >= 2 ueV"
        )


def fit_fss_curve(points: Sequence[FssFidelityPoint], tau1_ps: float, k: float,
                  fit_omega: bool = False, seed: int = 0,
                  estimator: str = "visibility_fidelity",
                  n_boot: int = 0) -> FitResult:
    """Weighted least-squares fit of the fidelity-versus-splitting points.

    The lifetime ``tau1_ps`` and fraction ``k`` are held fixed; only the
    spin-scattering time (and, with ``fit_omega``, the setup phase) is free.
    Multistart local optimization makes the result deterministic for a given
    seed.  Parameter errors come from the weighted-Jacobian covariance;
    ``n_boot`` > 0 replaces them with Monte-Carlo resampling errors (points
    redrawn from Normal(f, sigma_f)).
    """
    _validate_points(points)
    s_values = np.array([p.s_ueV for p in points])
    f_values = np.array([p.fidelity for p in points])
    sigmas = np.array([p.sigma_f for p in points])
    n_params = 2 if fit_omega else 1
    dof = len(points) - n_params
    if dof < 1:
        raise ValueError("not enough points for the number of fitted parameters")

    def residuals(theta: np.ndarray) -> np.ndarray:
        rate = theta[0]
        omega = theta[1] if fit_omega else 0.0
        model = _curve_from_rate(s_values, rate, omega, tau1_ps, k, estimator)
        return (model - f_values) / sigmas

    if fit_omega:
        starts = [
            np.array([1.0 / tau, om])
            for tau in _MULTISTART_TAU_SS_NS
            for om in _MULTISTART_OMEGA_DEG
        ]
        lower, upper = np.array([0.0, -180.0]), np.array([np.inf, 180.0])
    else:
        starts = [np.array([1.0 / tau]) for tau in _MULTISTART_TAU_SS_NS]
        lower, upper = np.array([0.0]), np.array([np.inf])

    best = None
    for start in starts:
        result = scipy.optimize.least_squares(
            residuals, start, bounds=(lower, upper), method="trf",
            xtol=1e-14, ftol=1e-14, gtol=1e-14,
        )
        if best is None or result.cost < best.cost:
            best = result
    if best is None or best.status <= 0:
        raise FitError(
            "least-squares fit did not converge",
            best_params=None if best is None else best.x,
        )

    jac = best.jac
    try:
        covariance = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        covariance = np.linalg.pinv(jac.T @ jac)

    if n_boot > 0:
        boot = _bootstrap_errors(
            best.x, s_values, f_values, sigmas, tau1_ps, k, fit_omega,
            estimator, n_boot, seed, (lower, upper),
        )
        rate_err = boot[0]
        omega_err = boot[1] if fit_omega else None
    else:
        rate_err = float(np.sqrt(max(covariance[0, 0], 0.0)))
        omega_err = float(np.sqrt(max(covariance[1, 1], 0.0))) if fit_omega else None

    rate = float(best.x[0])
    tau_ss = math.inf if rate == 0.0 else 1.0 / rate
    tau_err = math.inf if rate == 0.0 else rate_err / rate**2
    res = residuals(best.x)
    return FitResult(
        tau_ss_ns=tau_ss,
        tau_ss_err_ns=tau_err,
        rate_per_ns=rate,
        rate_err_per_ns=rate_err,
        omega_deg=float(best.x[1]) if fit_omega else None,
        omega_err_deg=omega_err,
        chi_squared=float(np.sum(res**2)),
        dof=dof,
        residuals=tuple(res.tolist()),
        covariance=tuple(tuple(row) for row in covariance.tolist()),
        n_points=len(points),
    )


def _bootstrap_errors(theta_best, s_values, f_values, sigmas, tau1_ps, k,
                      fit_omega, estimator, n_boot, seed, bounds):
    samples = []
    for child in np.random.SeedSequence(seed).spawn(n_boot):
        rng = np.random.default_rng(child)
        f_draw = rng.normal(f_values, sigmas)

        def residuals(theta: np.ndarray) -> np.ndarray:
            rate = theta[0]
            omega = theta[1] if fit_omega else 0.0
            model = _curve_from_rate(s_values, rate, omega, tau1_ps, k, estimator)
            return (model - f_draw) / sigmas

        result = scipy.optimize.least_squares(
            residuals, theta_best, bounds=bounds, method="trf",
            xtol=1e-12, ftol=1e-12, gtol=1e-12,
        )
        samples.append(result.x)
    return np.std(np.array(samples), axis=0, ddof=1)


@dataclass(frozen=True)
class DeviationResult:
    """Per-point deviations from the scattering-free model, and their combination."""

    z_scores: tuple[float, ...]
    combined_z: float
    model_fidelities: tuple[float, ...]


def dephasing_free_deviation(points: Sequence[FssFidelityPoint], tau1_ps: float,
                             k: float, s0_ueV: float = 0.25,
                             sigma_s_ueV: float = 0.0,
                             quadrature_order: int = 41) -> DeviationResult:
    """Significance of the data's deviation below the scattering-free model.

    The model fidelity at each point is the fluctuation-averaged closed form
    with an infinite spin-scattering time, a residual splitting floor
    ``s0_ueV`` (applied where the measured |S| falls below it) and Gaussian
    splitting jitter ``sigma_s_ueV``.  Per-point z = (f_model - f_measured) /
    sigma_f, positive when the data fall below the model; the combined
    significance is the inverse-variance-weighted mean deviation.
    """
    z_scores = []
    model_values = []
    weights = []
    deviations = []
    for point in points:
        s_center = max(abs(point.s_ueV), s0_ueV)
        params = cascade.CascadeParams(
            s_ueV=s_center, tau1_ps=tau1_ps, tau_ss_ns=math.inf, k=k,
        )
        f_model = cascade.fluctuation_averaged_fidelity(
            params, sigma_s_ueV, quadrature_order=quadrature_order,
        )
        model_values.append(f_model)
        deviation = f_model - point.fidelity
        z_scores.append(deviation / point.sigma_f)
        weights.append(1.0 / point.sigma_f**2)
        deviations.append(deviation)
    weights_arr = np.array(weights)
    combined = float(
        np.sum(np.array(deviations) * weights_arr) / math.sqrt(np.sum(weights_arr))
    )
    return DeviationResult(
        z_scores=tuple(z_scores),
        combined_z=combined,
        model_fidelities=tuple(model_values),
    )


def background_corrected_points(points: Sequence[FssFidelityPoint],
                                k: float) -> list[FssFidelityPoint]:
    """Undo the k-scaling of the closed-form fidelity for an unpolarized background.

    f_corrected = (f - (1 - k)/4) / k with errors scaled by 1/k; the fully
    mixed value 1/4 is a fixed point.  Corrected fidelities more than 3 sigma
    above 1 indicate an inconsistent k and produce a warning.
    """
    if not (0.0 < k <= 1.0):
        raise ValueError(f"k must be in (0, 1], got {k}")
    corrected = []
    for point in points:
        f_corr = (point.fidelity - (1.0 - k) / 4.0) / k
        sigma_corr = point.sigma_f / k
        if f_corr > 1.0 + 3.0 * sigma_corr:
            warnings.warn(
                f"background-corrected fidelity {f_corr:.4f} at S={point.s_ueV} "
                f"exceeds 1 by more than 3 sigma; k={k} may be inconsistent",
                stacklevel=2,
            )
        corrected.append(FssFidelityPoint(point.s_ueV, f_corr, sigma_corr))
    return corrected
