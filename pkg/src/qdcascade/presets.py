"""Built-in source presets for the two characterized quantum dots.

Each preset bundles the measured source parameters (lifetime, scattering
time, autocorrelation pair, residual splitting floor, nuclear-field model),
the instrument description (waveplate retardances, detector dark rate) and
simulation defaults, so a full pipeline run is a single command.
"""

from __future__ import annotations

import copy

from . import metrics
from .cascade import CascadeParams

PRESETS: dict[str, dict] = {
    "qd1": {
        "seed": 20250801,
        "cascade": {
            "S_ueV": 0.0,
            "S0_ueV": 0.25,
            "tau1_ps": 241.0,
            "tau_ss_ns": 11.0,
            "k": metrics.k_from_g2(0.008, 0.014),
            "omega_deg": 0.0,
            "background": "vertical",
            "B_max_T": 4.0,
            "N_nuclei": 4.0e5,
            "g_e_z": -0.15,
            "g_h_z": 1.1,
        },
        "tomography": {
            "settings": "full36",
            "pairs_per_setting": 100000.0,
            "acquisition_time_s": 60.0,
            "hwp_retardance": 0.516,
            "qwp_retardance": 0.258,
        },
        "corrections": {
            "dark_rate_hz": 20.0,
            "coincidence_window_ns": 1.0,
            "singles_xx_hz": 200000.0,
            "singles_x_hz": 200000.0,
            "g2_x": 0.008,
            "g2_xx": 0.014,
            "background_polarization": "vertical",
        },
    },
    "qd2": {
        "seed": 20250802,
        "cascade": {
            "S_ueV": 0.0,
            "S0_ueV": 0.25,
            "tau1_ps": 290.0,
            "tau_ss_ns": 14.0,
            "k": metrics.k_from_g2(0.015, 0.021),
            "omega_deg": 0.0,
            "background": "vertical",
            "B_max_T": 4.0,
            "N_nuclei": 4.0e5,
            "g_e_z": -0.15,
            "g_h_z": 1.1,
        },
        "tomography": {
            "settings": "full36",
            "pairs_per_setting": 100000.0,
            "acquisition_time_s": 60.0,
            "hwp_retardance": 0.516,
            "qwp_retardance": 0.258,
        },
        "corrections": {
            "dark_rate_hz": 20.0,
            "coincidence_window_ns": 1.0,
            "singles_xx_hz": 200000.0,
            "singles_x_hz": 200000.0,
            "g2_x": 0.015,
            "g2_xx": 0.021,
            "background_polarization": "vertical",
        },
    },
}


def preset_names() -> tuple[str, ...]:
    return tuple(sorted(PRESETS))


def preset_config(name: str) -> dict:
    """A deep copy of the named preset's pipeline configuration."""
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; available presets: {', '.join(preset_names())}"
        ) from None


def preset_params(name: str) -> CascadeParams:
    """The named preset's source parameters."""
    return CascadeParams.from_config_dict(preset_config(name)["cascade"])
