"""Figure rendering for reports: density-matrix bars, correction ladders, fit curves."""

from __future__ import annotations

import os
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fitting import FssFidelityPoint  # noqa: E402

_BASIS_LABELS = ("HH", "HV", "VH", "VV")
_PNG_METADATA = {"Software": "qdcascade"}


def _bar3d_panel(ax, values: np.ndarray, title: str) -> None:
    xs, ys = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    heights = values.ravel()
    colors = np.where(heights >= 0, "#cc3311", "#4477aa")
    ax.bar3d(xs - 0.35, ys - 0.35, np.zeros_like(heights), 0.7, 0.7, heights,
             color=colors, shade=True)
    ax.set_title(title)
    ax.set_xticks(range(4), _BASIS_LABELS)
    ax.set_yticks(range(4), _BASIS_LABELS)
    ax.set_zlim(min(-0.1, heights.min() * 1.1), max(0.55, heights.max() * 1.1))


def density_matrix_figure(rho: np.ndarray, path: str, title: Optional[str] = None) -> str:
    """Render the real and imaginary parts of a density matrix as 3D bars."""
    rho = np.asarray(rho, dtype=complex)
    fig = plt.figure(figsize=(9, 4))
    ax_re = fig.add_subplot(1, 2, 1, projection="3d")
    ax_im = fig.add_subplot(1, 2, 2, projection="3d")
    _bar3d_panel(ax_re, rho.real, "Re(rho)")
    _bar3d_panel(ax_im, rho.imag, "Im(rho)")
    if title:
        fig.suptitle(title)
    fig.subplots_adjust(left=0.02, right=0.98, wspace=0.08)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def correction_ladder_figure(stages: Sequence[Mapping], path: str) -> str:
    """Grouped bars of fidelity and concurrence across the correction chain."""
    names = [stage["name"] for stage in stages]
    fidelities = [stage["fidelity"]["value"] for stage in stages]
    concurrences = [stage["concurrence"]["value"] for stage in stages]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.18, fidelities, width=0.36, label="fidelity", color="#777777")
    ax.bar(x + 0.18, concurrences, width=0.36, label="concurrence", color="#cc3311")
    ax.set_xticks(x, [n.replace("_", "\n") for n in names])
    ax.set_ylim(0.0, 1.05)
    ax.axhline(1.0, color="black", linewidth=0.7, linestyle=":")
    ax.set_ylabel("value")
    ax.legend(loc="lower right")
    ax.set_title("correction chain")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def fit_curve_figure(points: Sequence[FssFidelityPoint],
                     curves: Mapping[str, tuple[Sequence[float], Sequence[float]]],
                     path: str) -> str:
    """Measured fidelity points with one or more model curves."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    if points:
        ax.errorbar(
            [p.s_ueV for p in points], [p.fidelity for p in points],
            yerr=[p.sigma_f for p in points],
            fmt="o", color="black", markersize=4, capsize=2, label="data",
        )
    for name, (s_grid, f_model) in curves.items():
        ax.plot(s_grid, f_model, label=name)
    ax.set_xlabel("fine-structure splitting (ueV)")
    ax.set_ylabel("fidelity")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def ensure_figure_dir(run_dir: str) -> str:
    path = os.path.join(run_dir, "figures")
    os.makedirs(path, exist_ok=True)
    return path
