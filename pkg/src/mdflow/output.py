"""CSV artifact writers and the file-based audits of a finished run.

Numbers are written with 17 significant digits so artifacts round-trip
bit-exactly and identical configs produce byte-identical files. Audits
deliberately re-read the emitted CSVs instead of trusting in-memory
state: a conservation claim in the summary holds for the data a consumer
would actually load.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from mdflow.grid import Field


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_field_csv(path: Path, field: Field) -> None:
    """One row per cell, columns (x, value)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", "value"])
        for x, v in zip(field.grid.centers, field.values):
            writer.writerow([_fmt(x), _fmt(v)])


def read_field_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def write_density_summary(path: Path, history) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["n", "t", "mass", "energy", "innerIterations", "minDensity"])
        for row in history:
            writer.writerow([
                row.index, _fmt(row.time), _fmt(row.mass), _fmt(row.energy),
                row.inner_iterations, _fmt(row.min_density),
            ])


def write_phase_summary(path: Path, history) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["n", "t", "mass", "energy", "minU", "maxU", "innerIterations"])
        for row in history:
            writer.writerow([
                row.index, _fmt(row.time), _fmt(row.mass), _fmt(row.energy),
                _fmt(row.min_u), _fmt(row.max_u), row.inner_iterations,
            ])


def write_iterates_csv(path: Path, report) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "objective", "gradMapNorm", "constraintResidual"])
        for k in range(len(report.objective_values)):
            writer.writerow([
                k, _fmt(report.objective_values[k]),
                _fmt(report.grad_map_norms[k]),
                _fmt(report.constraint_residuals[k]),
            ])


def write_certificates_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["instance", "check", "slack", "holds"])
        for row in rows:
            writer.writerow([row.instance, row.check, _fmt(row.slack), str(row.holds).lower()])


def _summary_columns(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as handle:
        header = handle.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def audit_density_run(summary_path: Path, rel_tol: float = 1e-10) -> dict:
    """Recompute the conservation and positivity audits from the summary file."""
    cols = _summary_columns(summary_path)
    mass = cols["mass"]
    drift = float(np.max(np.abs(mass - mass[0])))
    scale = max(abs(mass[0]), 1e-300)
    return {
        "massConserved": bool(drift <= rel_tol * scale),
        "massDriftRelative": drift / scale,
        "positive": bool(np.all(cols["minDensity"] > 0.0)),
        "minDensity": float(np.min(cols["minDensity"])),
    }


def audit_phase_run(summary_path: Path, abs_tol: float = 1e-10) -> dict:
    cols = _summary_columns(summary_path)
    mass = cols["mass"]
    drift = float(np.max(np.abs(mass - mass[0])))
    return {
        "massConserved": bool(drift <= abs_tol),
        "massDriftAbsolute": drift,
        "boundsPreserved": bool(
            np.all(cols["minU"] > -1.0) and np.all(cols["maxU"] < 1.0)
        ),
        "minU": float(np.min(cols["minU"])),
        "maxU": float(np.max(cols["maxU"])),
    }


def audit_iterates(path: Path, feas_tol: float = 1e-10) -> dict:
    cols = _summary_columns(path)
    worst = float(np.max(cols["constraintResidual"]))
    return {"feasible": bool(worst <= feas_tol), "maxConstraintResidual": worst}
