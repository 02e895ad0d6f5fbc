"""File formats: config documents, datasets, density-matrix tables, manifests.

All writers are deterministic (canonical key order, fixed float formatting,
no embedded timestamps except in manifests) and atomic (temp file + rename),
so identical inputs produce byte-identical outputs and interrupted writes
never leave partial files.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from datetime import datetime, timezone
from typing import Mapping, Optional, Sequence

import numpy as np

from .cascade import CONFIG_KEYS as CASCADE_CONFIG_KEYS
from .fitting import FssFidelityPoint
from .tomography import CoincidenceRecord, MeasurementSetting, TomographyDataset

TOOL_NAME = "qdcascade"

TOP_LEVEL_CONFIG_KEYS = ("seed", "cascade", "tomography", "corrections", "fit", "output_dir")
TOMOGRAPHY_CONFIG_KEYS = (
    "settings", "pairs_per_setting", "acquisition_time_s",
    "hwp_retardance", "qwp_retardance", "mle_multistart", "mle_tolerance",
)
CORRECTIONS_CONFIG_KEYS = (
    "dark_rate_hz", "coincidence_window_ns", "singles_xx_hz", "singles_x_hz",
    "g2_x", "g2_xx", "background_polarization",
)
FIT_CONFIG_KEYS = ("fit_omega", "estimator", "n_boot")

_DATASET_COLUMNS = ("label", "hwp_xx", "qwp_xx", "hwp_x", "qwp_x", "counts", "acq_time_s")


class ConfigError(ValueError):
    """Invalid or unknown configuration content (exit code 2)."""


class DataCorruptionError(RuntimeError):
    """Unreadable or malformed data file (exit code 3)."""


def _fmt(value: float) -> str:
    if value is None:
        return "none"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.10g}"


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_of_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Pipeline configuration

def validate_config(doc: Mapping) -> dict:
    """Check every key of a pipeline config document; return it as a plain dict."""
    if not isinstance(doc, Mapping):
        raise ConfigError("config document must be a mapping")
    sections = {
        "cascade": CASCADE_CONFIG_KEYS,
        "tomography": TOMOGRAPHY_CONFIG_KEYS,
        "corrections": CORRECTIONS_CONFIG_KEYS,
        "fit": FIT_CONFIG_KEYS,
    }
    for key in doc:
        if key not in TOP_LEVEL_CONFIG_KEYS:
            raise ConfigError(f"unknown config key: {key!r}")
    for section, allowed in sections.items():
        content = doc.get(section, {})
        if not isinstance(content, Mapping):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key in content:
            if key not in allowed:
                raise ConfigError(f"unknown config key: {section}.{key}")
    return {key: (dict(value) if isinstance(value, Mapping) else value)
            for key, value in doc.items()}


def load_config(path: str) -> dict:
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def save_config(doc: Mapping, path: str) -> None:
    atomic_write_text(path, canonical_json(validate_config(doc)))


# ---------------------------------------------------------------------------
# Tomography datasets

def _uniform(values, what: str):
    unique = set(values)
    if len(unique) > 1:
        raise ValueError(
            f"the columnar dataset format needs a uniform {what}; "
            f"got {sorted(unique)}; use the JSON format instead"
        )
    return next(iter(unique))


def dataset_to_text(dataset: TomographyDataset) -> str:
    """Columnar text form of a dataset (shared retardances in header comments)."""
    hwp_ret = _uniform(
        [r.setting.hwp_retardance_xx for r in dataset.records]
        + [r.setting.hwp_retardance_x for r in dataset.records],
        "half-wave retardance",
    )
    qwp_ret = _uniform(
        [r.setting.qwp_retardance_xx for r in dataset.records]
        + [r.setting.qwp_retardance_x for r in dataset.records],
        "quarter-wave retardance",
    )
    singles_xx = _uniform([r.singles_xx_hz for r in dataset.records], "singles_xx rate")
    singles_x = _uniform([r.singles_x_hz for r in dataset.records], "singles_x rate")
    lines = [
        f"# {TOOL_NAME} tomography dataset",
        f"# dark_rate_hz {_fmt(dataset.dark_rate_hz)}",
        f"# coincidence_window_ns {_fmt(dataset.coincidence_window_ns)}",
        f"# hwp_retardance {_fmt(hwp_ret)}",
        f"# qwp_retardance {_fmt(qwp_ret)}",
        f"# singles_xx_hz {_fmt(singles_xx)}",
        f"# singles_x_hz {_fmt(singles_x)}",
        f"# corrections_applied {','.join(dataset.corrections_applied) or 'none'}",
        "\t".join(_DATASET_COLUMNS),
    ]
    for record in dataset.records:
        s = record.setting
        lines.append("\t".join([
            s.label,
            _fmt(s.hwp_xx_deg), _fmt(s.qwp_xx_deg),
            _fmt(s.hwp_x_deg), _fmt(s.qwp_x_deg),
            _fmt(record.counts), _fmt(record.acquisition_time_s),
        ]))
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> TomographyDataset:
    meta: dict[str, str] = {}
    rows = []
    header_seen = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].strip().split(None, 1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            continue
        fields = line.split("\t")
        if not header_seen:
            if tuple(fields) != _DATASET_COLUMNS:
                raise DataCorruptionError(
                    f"line {line_no}: expected dataset header {_DATASET_COLUMNS}, "
                    f"got {tuple(fields)}"
                )
            header_seen = True
            continue
        if len(fields) != len(_DATASET_COLUMNS):
            raise DataCorruptionError(
                f"line {line_no}: expected {len(_DATASET_COLUMNS)} columns, got {len(fields)}"
            )
        rows.append((line_no, fields))
    if not header_seen or not rows:
        raise DataCorruptionError("dataset file has no header or no records")

    def meta_float(key: str, default: float = 0.0) -> float:
        raw = meta.get(key)
        if raw is None or raw == "none":
            return default
        return float(raw)

    hwp_ret = meta_float("hwp_retardance", 0.5)
    qwp_ret = meta_float("qwp_retardance", 0.25)
    singles_xx = meta.get("singles_xx_hz", "none")
    singles_x = meta.get("singles_x_hz", "none")
    corrections = meta.get("corrections_applied", "none")
    records = []
    for line_no, fields in rows:
        try:
            setting = MeasurementSetting(
                label=fields[0],
                hwp_xx_deg=float(fields[1]), qwp_xx_deg=float(fields[2]),
                hwp_x_deg=float(fields[3]), qwp_x_deg=float(fields[4]),
                hwp_retardance_xx=hwp_ret, qwp_retardance_xx=qwp_ret,
                hwp_retardance_x=hwp_ret, qwp_retardance_x=qwp_ret,
            )
            records.append(CoincidenceRecord(
                setting=setting,
                counts=float(fields[5]),
                acquisition_time_s=float(fields[6]),
                singles_xx_hz=None if singles_xx == "none" else float(singles_xx),
                singles_x_hz=None if singles_x == "none" else float(singles_x),
            ))
        except ValueError as exc:
            raise DataCorruptionError(f"line {line_no}: {exc}") from exc
    return TomographyDataset(
        records=tuple(records),
        dark_rate_hz=meta_float("dark_rate_hz"),
        coincidence_window_ns=meta_float("coincidence_window_ns"),
        corrections_applied=() if corrections == "none" else tuple(corrections.split(",")),
    )


def write_dataset_text(dataset: TomographyDataset, path: str) -> None:
    atomic_write_text(path, dataset_to_text(dataset))


def read_dataset_text(path: str) -> TomographyDataset:
    try:
        with open(path) as handle:
            return dataset_from_text(handle.read())
    except OSError as exc:
        raise DataCorruptionError(f"cannot read dataset {path}: {exc}") from exc


def dataset_to_document(dataset: TomographyDataset) -> dict:
    return {
        "dark_rate_hz": dataset.dark_rate_hz,
        "coincidence_window_ns": dataset.coincidence_window_ns,
        "corrections_applied": list(dataset.corrections_applied),
        "records": [
            {
                "label": r.setting.label,
                "hwp_xx_deg": r.setting.hwp_xx_deg,
                "qwp_xx_deg": r.setting.qwp_xx_deg,
                "hwp_x_deg": r.setting.hwp_x_deg,
                "qwp_x_deg": r.setting.qwp_x_deg,
                "hwp_retardance_xx": r.setting.hwp_retardance_xx,
                "qwp_retardance_xx": r.setting.qwp_retardance_xx,
                "hwp_retardance_x": r.setting.hwp_retardance_x,
                "qwp_retardance_x": r.setting.qwp_retardance_x,
                "counts": r.counts,
                "acquisition_time_s": r.acquisition_time_s,
                "singles_xx_hz": r.singles_xx_hz,
                "singles_x_hz": r.singles_x_hz,
            }
            for r in dataset.records
        ],
    }


def dataset_from_document(doc: Mapping) -> TomographyDataset:
    try:
        records = tuple(
            CoincidenceRecord(
                setting=MeasurementSetting(
                    label=entry["label"],
                    hwp_xx_deg=entry["hwp_xx_deg"], qwp_xx_deg=entry["qwp_xx_deg"],
                    hwp_x_deg=entry["hwp_x_deg"], qwp_x_deg=entry["qwp_x_deg"],
                    hwp_retardance_xx=entry["hwp_retardance_xx"],
                    qwp_retardance_xx=entry["qwp_retardance_xx"],
                    hwp_retardance_x=entry["hwp_retardance_x"],
                    qwp_retardance_x=entry["qwp_retardance_x"],
                ),
                counts=entry["counts"],
                acquisition_time_s=entry["acquisition_time_s"],
                singles_xx_hz=entry.get("singles_xx_hz"),
                singles_x_hz=entry.get("singles_x_hz"),
            )
            for entry in doc["records"]
        )
        return TomographyDataset(
            records=records,
            dark_rate_hz=doc.get("dark_rate_hz", 0.0),
            coincidence_window_ns=doc.get("coincidence_window_ns", 0.0),
            corrections_applied=tuple(doc.get("corrections_applied", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataCorruptionError(f"malformed dataset document: {exc}") from exc


def write_dataset_json(dataset: TomographyDataset, path: str) -> None:
    atomic_write_text(path, canonical_json(dataset_to_document(dataset)))


def read_dataset_json(path: str) -> TomographyDataset:
    try:
        with open(path) as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise DataCorruptionError(f"cannot read dataset {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataCorruptionError(f"dataset {path} is not valid JSON: {exc}") from exc
    return dataset_from_document(doc)


def read_dataset(path: str) -> TomographyDataset:
    """Read a dataset in either the columnar or the JSON format."""
    if path.endswith(".json"):
        return read_dataset_json(path)
    return read_dataset_text(path)


# ---------------------------------------------------------------------------
# Density matrices

_BASIS_ORDER = "HH HV VH VV"


def density_matrix_to_text(rho: np.ndarray) -> str:
    """Real and imaginary 4x4 tables, 12 significant digits, row-major."""
    rho = np.asarray(rho, dtype=complex)
    lines = [f"# density matrix, basis order: {_BASIS_ORDER}", "# real part"]
    for row in rho.real:
        lines.append("\t".join(f"{value:.11e}" for value in row))
    lines.append("# imaginary part")
    for row in rho.imag:
        lines.append("\t".join(f"{value:.11e}" for value in row))
    return "\n".join(lines) + "\n"


def density_matrix_from_text(text: str) -> np.ndarray:
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        rows.append([float(field) for field in line.split("\t")])
    if len(rows) != 8 or any(len(row) != 4 for row in rows):
        raise DataCorruptionError(
            f"expected two 4x4 tables (8 data rows), got {len(rows)} rows"
        )
    real = np.array(rows[:4])
    imag = np.array(rows[4:])
    return real + 1j * imag


def write_density_matrix(rho: np.ndarray, path: str) -> None:
    atomic_write_text(path, density_matrix_to_text(rho))


def read_density_matrix(path: str) -> np.ndarray:
    try:
        with open(path) as handle:
            return density_matrix_from_text(handle.read())
    except OSError as exc:
        raise DataCorruptionError(f"cannot read density matrix {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Fidelity-versus-splitting point tables

def points_to_text(points: Sequence[FssFidelityPoint]) -> str:
    lines = ["S_ueV\tfidelity\tsigma_f"]
    for point in points:
        lines.append(
            f"{_fmt(point.s_ueV)}\t{_fmt(point.fidelity)}\t{_fmt(point.sigma_f)}"
        )
    return "\n".join(lines) + "\n"


def points_from_text(text: str) -> list[FssFidelityPoint]:
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    if not lines:
        raise DataCorruptionError("points file is empty")
    header = tuple(lines[0].split("\t"))
    if header != ("S_ueV", "fidelity", "sigma_f"):
        missing = [c for c in ("S_ueV", "fidelity", "sigma_f") if c not in header]
        raise ConfigError(
            f"points file is missing the column(s): {', '.join(missing) or header}"
        )
    points = []
    for line_no, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataCorruptionError(f"line {line_no}: expected 3 columns, got {len(fields)}")
        try:
            points.append(FssFidelityPoint(float(fields[0]), float(fields[1]), float(fields[2])))
        except ValueError as exc:
            raise DataCorruptionError(f"line {line_no}: {exc}") from exc
    return points


def write_points(points: Sequence[FssFidelityPoint], path: str) -> None:
    atomic_write_text(path, points_to_text(points))


def read_points(path: str) -> list[FssFidelityPoint]:
    try:
        with open(path) as handle:
            return points_from_text(handle.read())
    except OSError as exc:
        raise DataCorruptionError(f"cannot read points {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Curve tables and manifests

def curve_to_text(s_grid: Sequence[float], f_model: Sequence[float]) -> str:
    lines = ["S_ueV\tf_model"]
    for s, f in zip(s_grid, f_model):
        lines.append(f"{_fmt(s)}\t{_fmt(f)}")
    return "\n".join(lines) + "\n"


def write_manifest(directory: str, config: Mapping, seed: int,
                   inputs: Optional[Mapping[str, str]] = None,
                   version: str = "0.1.0") -> str:
    """Record everything needed to rerun a pipeline step bit-exactly."""
    manifest = {
        "tool": TOOL_NAME,
        "version": version,
        "seed": seed,
        "config_sha256": sha256_of_text(canonical_json(config)),
        "input_digests": dict(inputs or {}),
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(directory, "manifest.json")
    atomic_write_text(path, canonical_json(manifest))
    return path
