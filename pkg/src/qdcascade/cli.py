"""Command-line pipelines: simulate, reconstruct, correct, fit, report.

Every command is deterministic given its config and seed, writes a manifest
of what it ran, and uses the exit-code contract: 0 success, 2 config or
input error, 3 corrupt data file, 4 numerical failure.
"""

from __future__ import annotations

import functools
import json
import math
import os
import sys
from dataclasses import replace

import click
import numpy as np

from . import __version__
from . import cascade, corrections, fitting, io, metrics, plots, presets, tomography

OUTPUT_DIR_ENVVAR = "QDCASCADE_OUTPUT_DIR"

EXIT_CONFIG = 2
EXIT_CORRUPT = 3
EXIT_NUMERICAL = 4

_ARM_STATES = {
    "vertical": corrections.VERTICAL_ARM,
    "unpolarized": corrections.UNPOLARIZED_ARM,
}


def _handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except io.DataCorruptionError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CORRUPT)
        except (io.ConfigError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (tomography.ReconstructionError, fitting.FitError,
                corrections.CorrectionError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _out_dir(out) -> str:
    directory = out or os.environ.get(OUTPUT_DIR_ENVVAR) or "."
    os.makedirs(directory, exist_ok=True)
    return directory


@click.group()
@click.version_option(version=__version__, prog_name="qdcascade")
def main() -> None:
    """Photon-pair cascade simulation, tomography and correction pipelines."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config document (JSON).")
@click.option("--preset", "preset_name", type=click.Choice(presets.preset_names()),
              default=None, help="Start from a built-in source preset.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(), default=None,
              help=f"Output directory (default: ${OUTPUT_DIR_ENVVAR} or '.').")
@_handle_errors
def simulate(config_path, preset_name, seed, out) -> None:
    """Sample a polarization tomography dataset from a configured source."""
    if config_path is None and preset_name is None:
        raise io.ConfigError("either --config or --preset is required")
    config = presets.preset_config(preset_name) if preset_name else {}
    if config_path is not None:
        config.update(io.load_config(config_path))
    config = io.validate_config(config)
    if seed is not None:
        config["seed"] = seed
    config.setdefault("seed", 0)
    run_seed = int(config["seed"])

    params = cascade.CascadeParams.from_config_dict(config.get("cascade", {}))
    corr_cfg = config.get("corrections", {})
    g2_x, g2_xx = corr_cfg.get("g2_x"), corr_cfg.get("g2_xx")
    if g2_x is not None and g2_xx is not None:
        arm = _ARM_STATES[corr_cfg.get("background_polarization", "vertical")]
        k_eff, bg_eff = corrections.coincidence_background(
            g2_x, g2_xx, arm_state_xx=arm, arm_state_x=arm)
        params = replace(params, k=k_eff, background=bg_eff)

    tomo_cfg = config.get("tomography", {})
    settings = tomography.standard_settings(
        tomo_cfg.get("settings", "full36"),
        hwp_retardance=tomo_cfg.get("hwp_retardance", 0.5),
        qwp_retardance=tomo_cfg.get("qwp_retardance", 0.25),
    )
    rho_true = cascade.time_averaged_state(params)
    dataset = tomography.sample_dataset(
        rho_true, settings,
        n0=tomo_cfg.get("pairs_per_setting", 1e5),
        seed=run_seed,
        dark_rate_hz=corr_cfg.get("dark_rate_hz", 0.0),
        coincidence_window_ns=corr_cfg.get("coincidence_window_ns", 0.0),
        acquisition_time_s=tomo_cfg.get("acquisition_time_s", 1.0),
        singles_xx_hz=corr_cfg.get("singles_xx_hz", 0.0),
        singles_x_hz=corr_cfg.get("singles_x_hz", 0.0),
    )

    directory = _out_dir(out)
    io.save_config(config, os.path.join(directory, "config.json"))
    io.write_dataset_text(dataset, os.path.join(directory, "dataset.tsv"))
    io.write_dataset_json(dataset, os.path.join(directory, "dataset.json"))
    io.write_density_matrix(rho_true, os.path.join(directory, "rho_true.txt"))
    truth = {
        "fidelity": metrics.fidelity_to_bell(rho_true),
        "concurrence": metrics.concurrence(rho_true),
        "largest_eigenvalue": metrics.largest_eigenvalue(rho_true),
        "k_effective": params.k,
    }
    io.atomic_write_text(os.path.join(directory, "truth.json"), io.canonical_json(truth))
    io.write_manifest(directory, config, run_seed, version=__version__)
    click.echo(
        f"wrote {len(dataset.records)}-setting dataset to {directory} "
        f"(seed {run_seed}, truth fidelity {truth['fidelity']:.6f})"
    )


@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--n0", type=float, default=None,
              help="Pairs per setting (default: estimated from basis quadruples).")
@click.option("--mc-trials", type=int, default=0,
              help="Poisson Monte-Carlo trials for metric uncertainties.")
@click.option("--multistart", type=int, default=4)
@click.option("--seed", type=int, default=0)
@click.option("--jobs", type=int, default=1,
              help="Worker processes for the Monte-Carlo trials.")
@click.option("--assume-ideal-retardance", is_flag=True, default=False,
              help="Reconstruct with ideal 0.5/0.25 waveplates regardless of the dataset.")
@_handle_errors
def reconstruct(dataset_path, out, n0, mc_trials, multistart, seed, jobs,
                assume_ideal_retardance) -> None:
    """Maximum-likelihood density matrix and entanglement metrics of a dataset."""
    dataset = io.read_dataset(dataset_path)
    if assume_ideal_retardance:
        dataset = dataset.with_settings(
            [s.with_retardances(0.5, 0.25) for s in dataset.settings()])
    options = tomography.ReconstructionOptions(multistart=multistart, seed=seed)
    rho = tomography.mle_reconstruct(dataset, options=options, n0=n0)
    result = corrections.evaluate_metrics(
        rho, dataset, None, mc_trials, seed, n0, jobs)

    directory = _out_dir(out)
    io.write_density_matrix(rho, os.path.join(directory, "rho.txt"))
    io.atomic_write_text(
        os.path.join(directory, "metrics.json"), io.canonical_json(result.to_dict()))
    io.write_manifest(
        directory, {"dataset": os.path.basename(dataset_path), "n0": n0},
        seed, inputs={os.path.basename(dataset_path): io.sha256_of_file(dataset_path)},
        version=__version__)
    for name, entry in result.to_dict().items():
        err = f" +- {entry['error']:.6f}" if entry["error"] is not None else ""
        click.echo(f"{name}: {entry['value']:.6f}{err}")


@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--g2-x", type=float, default=None)
@click.option("--g2-xx", type=float, default=None)
@click.option("--bg", "bg_polarization", type=click.Choice(sorted(_ARM_STATES)),
              default="vertical", help="Polarization of the laser background.")
@click.option("--dark-rate", type=float, default=None,
              help="Detector dark rate in Hz (default: dataset metadata).")
@click.option("--window", type=float, default=None,
              help="Coincidence window in ns (default: dataset metadata).")
@click.option("--n0", type=float, default=None)
@click.option("--mc-trials", type=int, default=0)
@click.option("--multistart", type=int, default=4)
@click.option("--seed", type=int, default=0)
@click.option("--jobs", type=int, default=1,
              help="Worker processes for the Monte-Carlo trials.")
@_handle_errors
def correct(dataset_path, out, g2_x, g2_xx, bg_polarization, dark_rate, window,
            n0, mc_trials, multistart, seed, jobs) -> None:
    """Run the correction chain: raw, dark counts, retardance, background."""
    dataset = io.read_dataset(dataset_path)
    dark_model = corrections.DarkCountModel(
        dark_rate_hz=dataset.dark_rate_hz if dark_rate is None else dark_rate,
        coincidence_window_ns=(
            dataset.coincidence_window_ns if window is None else window),
    )
    bg_state = None
    if g2_x is not None and g2_xx is not None:
        arm = _ARM_STATES[bg_polarization]
        _, bg_state = corrections.coincidence_background(
            g2_x, g2_xx, arm_state_xx=arm, arm_state_x=arm)
    options = tomography.ReconstructionOptions(multistart=multistart, seed=seed)
    stages = corrections.run_correction_chain(
        dataset, dark_model=dark_model, g2_x=g2_x, g2_xx=g2_xx,
        bg_state=bg_state, options=options, n0=n0, mc_trials=mc_trials,
        seed=seed, jobs=jobs)

    directory = _out_dir(out)
    stage_docs = []
    previous = None
    for stage in stages:
        doc = {"name": stage.name}
        doc.update(stage.metrics.to_dict())
        doc["delta_fidelity"] = (
            None if previous is None
            else stage.metrics.fidelity - previous.metrics.fidelity)
        doc["delta_concurrence"] = (
            None if previous is None
            else stage.metrics.concurrence - previous.metrics.concurrence)
        stage_docs.append(doc)
        io.write_density_matrix(
            stage.rho, os.path.join(directory, f"rho_{stage.name}.txt"))
        previous = stage
    io.atomic_write_text(
        os.path.join(directory, "stages.json"), io.canonical_json(stage_docs))
    io.write_manifest(
        directory, {"dataset": os.path.basename(dataset_path), "g2_x": g2_x, "g2_xx": g2_xx},
        seed, inputs={os.path.basename(dataset_path): io.sha256_of_file(dataset_path)},
        version=__version__)
    for doc in stage_docs:
        delta = ("" if doc["delta_fidelity"] is None
                 else f" ({doc['delta_fidelity']:+.4f})")
        click.echo(f"{doc['name']}: fidelity {doc['fidelity']['value']:.6f}{delta}")


@main.command()
@click.option("--points", "points_path", type=click.Path(), required=True,
              help="Table of S_ueV, fidelity, sigma_f.")
@click.option("--out", type=click.Path(), default=None)
@click.option("--preset", "preset_name", type=click.Choice(presets.preset_names()),
              default=None, help="Take tau1 and k from a source preset.")
@click.option("--tau1-ps", type=float, default=None)
@click.option("--k", type=float, default=None)
@click.option("--fit-omega", is_flag=True, default=False,
              help="Also fit the setup phase omega.")
@click.option("--estimator", type=click.Choice(fitting.ESTIMATORS),
              default="visibility_fidelity")
@click.option("--n-boot", type=int, default=0,
              help="Monte-Carlo resampling trials for parameter errors.")
@click.option("--seed", type=int, default=0)
@_handle_errors
def fit(points_path, out, preset_name, tau1_ps, k, fit_omega, estimator,
        n_boot, seed) -> None:
    """Fit the spin-scattering model to fidelity-versus-splitting points."""
    if preset_name is not None:
        params = presets.preset_params(preset_name)
        tau1_ps = params.tau1_ps if tau1_ps is None else tau1_ps
        k = params.k if k is None else k
    if tau1_ps is None or k is None:
        raise io.ConfigError("--tau1-ps and --k are required (or use --preset)")
    points = io.read_points(points_path)
    result = fitting.fit_fss_curve(
        points, tau1_ps, k, fit_omega=fit_omega, seed=seed,
        estimator=estimator, n_boot=n_boot)

    directory = _out_dir(out)
    s_max = max(abs(p.s_ueV) for p in points)
    s_grid = np.linspace(0.0, 1.1 * s_max, 111)
    f_model = fitting.model_curve(
        s_grid, tau1_ps, result.tau_ss_ns, k,
        omega_deg=result.omega_deg or 0.0, estimator=estimator)
    doc = result.to_dict()
    doc.update({"tau1_ps": tau1_ps, "k": k, "estimator": estimator,
                "fit_omega": fit_omega, "seed": seed})
    doc = {key: (None if isinstance(value, float) and math.isinf(value) else value)
           for key, value in doc.items()}
    io.atomic_write_text(os.path.join(directory, "fit.json"), io.canonical_json(doc))
    io.atomic_write_text(
        os.path.join(directory, "curve.tsv"), io.curve_to_text(s_grid, f_model))
    io.write_points(points, os.path.join(directory, "points.tsv"))
    io.write_manifest(
        directory, doc, seed,
        inputs={os.path.basename(points_path): io.sha256_of_file(points_path)},
        version=__version__)
    omega_part = ""
    if fit_omega:
        omega_part = f", omega = {result.omega_deg:.2f} +- {result.omega_err_deg:.2f} deg"
    click.echo(
        f"tau_ss = {result.tau_ss_ns:.3g} +- {result.tau_ss_err_ns:.3g} ns"
        f"{omega_part} (chi2/dof = {result.chi_squared:.2f}/{result.dof})"
    )


def _load_json(path):
    if not os.path.exists(path):
        return None
    with open(path) as handle:
        return json.load(handle)


@main.command()
@click.option("--run-dir", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), default=None,
              help="Where to write the report (default: the run directory).")
@_handle_errors
def report(run_dir, out) -> None:
    """Consolidate a run directory into a summary with figures."""
    directory = _out_dir(out or run_dir)
    lines = ["qdcascade analysis report", ""]
    tsv_lines = []
    missing = []
    wrote_figures = []
    figure_dir = plots.ensure_figure_dir(directory)

    stages = _load_json(os.path.join(run_dir, "stages.json"))
    truth = _load_json(os.path.join(run_dir, "truth.json"))
    fit_doc = _load_json(os.path.join(run_dir, "fit.json"))
    metrics_doc = _load_json(os.path.join(run_dir, "metrics.json"))

    if stages:
        lines.append("[correction chain]")
        header = ("stage", "fidelity", "d_fidelity", "concurrence",
                  "d_concurrence", "largest_eig")
        tsv_lines.append("\t".join(header))
        lines.append(f"{'stage':<22}{'fidelity':>12}{'d_fid':>10}"
                     f"{'concurrence':>14}{'d_conc':>10}{'top_eig':>10}")
        for doc in stages:
            d_f = doc.get("delta_fidelity")
            d_c = doc.get("delta_concurrence")
            row = (
                doc["name"],
                f"{doc['fidelity']['value']:.6f}",
                "-" if d_f is None else f"{d_f:+.6f}",
                f"{doc['concurrence']['value']:.6f}",
                "-" if d_c is None else f"{d_c:+.6f}",
                f"{doc['largest_eigenvalue']['value']:.6f}",
            )
            tsv_lines.append("\t".join(row))
            lines.append(f"{row[0]:<22}{row[1]:>12}{row[2]:>10}"
                         f"{row[3]:>14}{row[4]:>10}{row[5]:>10}")
        lines.append("")
        wrote_figures.append(plots.correction_ladder_figure(
            stages, os.path.join(figure_dir, "correction_ladder.png")))
        for name in ("raw", "background_corrected"):
            rho_path = os.path.join(run_dir, f"rho_{name}.txt")
            if os.path.exists(rho_path):
                rho = io.read_density_matrix(rho_path)
                wrote_figures.append(plots.density_matrix_figure(
                    rho, os.path.join(figure_dir, f"density_matrix_{name}.png"),
                    title=name))
    else:
        missing.append("stages.json (run the correct command)")

    if metrics_doc:
        lines.append("[reconstruction]")
        for name, entry in sorted(metrics_doc.items()):
            err = "-" if entry.get("error") is None else f"{entry['error']:.6f}"
            lines.append(f"{name:<22}{entry['value']:.6f}  +- {err}")
        lines.append("")

    if truth:
        lines.append("[simulation truth]")
        for key in ("fidelity", "concurrence", "largest_eigenvalue", "k_effective"):
            if key in truth:
                lines.append(f"{key:<22}{truth[key]:.6f}")
        lines.append("")

    if fit_doc:
        lines.append("[spin-scattering fit]")
        tau_err = fit_doc.get("tau_ss_err_ns")
        tau_err_txt = "unbounded" if tau_err is None else f"{tau_err:.3g}"
        tau = fit_doc.get("tau_ss_ns")
        tau_txt = "unbounded" if tau is None else f"{tau:.4g}"
        lines.append(f"tau_ss = {tau_txt} +- {tau_err_txt} ns")
        if fit_doc.get("omega_deg") is not None:
            lines.append(
                f"omega  = {fit_doc['omega_deg']:.3g} +- "
                f"{fit_doc.get('omega_err_deg', float('nan')):.3g} deg")
        lines.append(
            f"chi2/dof = {fit_doc['chi_squared']:.3f}/{fit_doc['dof']}")
        lines.append("")
        curve_path = os.path.join(run_dir, "curve.tsv")
        points_path = os.path.join(run_dir, "points.tsv")
        if os.path.exists(curve_path):
            rows = [l.split("\t") for l in open(curve_path).read().splitlines()[1:]]
            s_grid = [float(r[0]) for r in rows]
            f_model = [float(r[1]) for r in rows]
            points = io.read_points(points_path) if os.path.exists(points_path) else []
            wrote_figures.append(plots.fit_curve_figure(
                points, {"fit": (s_grid, f_model)},
                os.path.join(figure_dir, "fit_curve.png")))
    elif not stages and not metrics_doc and not truth:
        lines.append("no runs found in the run directory")
        lines.append("")

    if missing:
        lines.append("[missing artifacts]")
        lines.extend(f"- {item}" for item in missing)
        lines.append("")

    if wrote_figures:
        lines.append("[figures]")
        lines.extend(f"- figures/{os.path.basename(p)}" for p in wrote_figures)
        lines.append("")

    io.atomic_write_text(os.path.join(directory, "report.txt"), "\n".join(lines))
    if tsv_lines:
        io.atomic_write_text(
            os.path.join(directory, "report.tsv"), "\n".join(tsv_lines) + "\n")
    click.echo("\n".join(lines))


if __name__ == "__main__":
    main()
