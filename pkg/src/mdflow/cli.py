"""Experiment runner: `mdflow run <config>` and `mdflow certify <config>`.

Runs write snapshot CSVs, a per-step summary CSV and a JSON summary into
the configured output directory (overridable with MDFLOW_OUT). Exit codes:
0 when the run's declared audits pass, 1 on a runtime failure or a failed
audit, 2 on a config error (in which case nothing is written).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from mdflow import output as out
from mdflow.cahn_hilliard import CahnHilliardFlow, CHEnergy, ch_steady_state, cosine_initial
from mdflow.certify import run_certification_suite
from mdflow.config import RunConfig, load_config
from mdflow.constrained import entropy_linear_problem
from mdflow.exceptions import ConfigError, MDFlowError
from mdflow.grid import Field, Grid1D
from mdflow.mirror_maps import EntropyMap
from mdflow.solvers import MirrorDescent, QuasiNewton, VariableMetric
from mdflow.wasserstein import (
    AggregationEnergy,
    PorousMediumEnergy,
    WassersteinFlow,
    aggregation_equilibrium,
    barenblatt,
    gaussian_density,
)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=float)
        handle.write("\n")


def _snapshot_name(index: int) -> str:
    return f"snapshot_{index:06d}.csv"


def _error_metrics(snapshot_path: Path, exact_fn) -> dict:
    x, values = out.read_field_csv(snapshot_path)
    exact = exact_fn(x)
    dx = float(x[1] - x[0])
    return {
        "l1ErrorVsExact": dx * float(np.sum(np.abs(values - exact))),
        "linfErrorVsExact": float(np.max(np.abs(values - exact))),
    }


def _run_density(cfg: RunConfig, outdir: Path) -> tuple[dict, bool]:
    grid = Grid1D(cfg["xLeft"], cfg["xRight"], cfg["Nx"])
    if cfg.experiment == "porous-medium":
        energy = PorousMediumEnergy(cfg["m"])
        rho_in = Field(grid, barenblatt(grid.centers, 0.0, cfg["m"], cfg["t0"], cfg["C"]))
        exact_fn = lambda x: barenblatt(x, cfg["Nt"] * cfg["tau"], cfg["m"], cfg["t0"], cfg["C"])
    else:
        energy = AggregationEnergy(grid)
        rho_in = gaussian_density(grid, cfg["sigma"])
        exact_fn = aggregation_equilibrium

    solver = WassersteinFlow(
        energy=energy,
        tau=cfg["tau"],
        n_steps=cfg["Nt"],
        epsilon=cfg["epsilon"],
        eta=cfg["eta"],
        tol=cfg["tol"],
        iter_max=cfg["iterMax"],
        family=cfg.family,
        snapshot_every=cfg["snapshotEvery"] or None,
    ).fit(rho_in)

    for index, _, field in solver.snapshots_:
        out.write_field_csv(outdir / _snapshot_name(index), field)
    summary_path = outdir / "summary.csv"
    out.write_density_summary(summary_path, solver.history_)

    audits = out.audit_density_run(summary_path)
    declared = audits["massConserved"]
    if cfg.family == "mirror-descent":
        declared = declared and audits["positive"]
    final_index = solver.history_[-1].index
    metrics = _error_metrics(outdir / _snapshot_name(final_index), exact_fn)
    payload = {
        "audits": audits,
        "metrics": metrics,
        "termination": "completed",
        "stalledSteps": int(sum(row.stalled for row in solver.history_)),
    }
    return payload, declared


def _run_phase_field(cfg: RunConfig, outdir: Path) -> tuple[dict, bool]:
    grid = Grid1D(cfg["xLeft"], cfg["xRight"], cfg["Nx"])
    energy = CHEnergy(grid, capillary=cfg["alpha"], potential=cfg["potential"])
    solver = CahnHilliardFlow(
        energy=energy,
        tau=cfg["tau"],
        n_steps=cfg["Nt"],
        epsilon1=cfg["epsilon1"],
        epsilon2=cfg["epsilon2"],
        eta=cfg["eta"],
        tol=cfg["tol"],
        iter_max=cfg["iterMax"],
        family=cfg.family,
        snapshot_every=cfg["snapshotEvery"] or None,
    ).fit(cosine_initial(grid, cfg["alpha"]))

    for index, _, field in solver.snapshots_:
        out.write_field_csv(outdir / _snapshot_name(index), field)
    summary_path = outdir / "summary.csv"
    out.write_phase_summary(summary_path, solver.history_)

    audits = out.audit_phase_run(summary_path)
    declared = audits["massConserved"]
    if cfg.family == "mirror-descent":
        declared = declared and audits["boundsPreserved"]
    final_index = solver.history_[-1].index
    metrics = _error_metrics(
        outdir / _snapshot_name(final_index),
        lambda x: ch_steady_state(x, cfg["alpha"]),
    )
    payload = {
        "audits": audits,
        "metrics": metrics,
        "termination": "completed",
        "stalledSteps": int(sum(row.stalled for row in solver.history_)),
    }
    return payload, declared


def _run_simplex_toy(cfg: RunConfig, outdir: Path) -> tuple[dict, bool]:
    rng = np.random.default_rng(cfg["seed"])
    problem = entropy_linear_problem(rng.uniform(0.0, 2.0, size=cfg["n"]))
    u0 = np.full(cfg["n"], 1.0 / cfg["n"])
    emap = EntropyMap(1.0)
    common = dict(step_size=cfg["eta"], max_iter=cfg["steps"], rel_tol=cfg["tol"])
    if cfg.family == "mirror-descent":
        solver = MirrorDescent(mirror_map=emap, **common)
    elif cfg.family == "variable-metric":
        solver = VariableMetric(mirror_map=emap, **common)
    else:
        solver = QuasiNewton(**common)
    solver.fit(problem, u0)

    iterates_path = outdir / "iterates.csv"
    out.write_iterates_csv(iterates_path, solver.report_)
    audits = out.audit_iterates(iterates_path)
    payload = {
        "audits": audits,
        "termination": solver.report_.termination,
        "finalObjective": solver.report_.objective_values[-1],
    }
    return payload, audits["feasible"]


def _run_certify(cfg: RunConfig, outdir: Path) -> tuple[dict, bool]:
    rows = run_certification_suite(
        seed=cfg["seed"],
        md_steps=cfg["mdSteps"],
        md_eta=cfg["mdEta"],
        flow_time=cfg["flowTime"],
        flow_dt=cfg["flowDt"],
        linear_rate_eta=cfg["linearRateEta"],
    )
    out.write_certificates_csv(outdir / "certificates.csv", rows)
    all_hold = all(row.holds for row in rows)
    payload = {
        "certificates": [
            {"instance": r.instance, "check": r.check, "slack": r.slack, "holds": r.holds}
            for r in rows
        ],
        "allHold": all_hold,
    }
    return payload, all_hold


_RUNNERS = {
    "porous-medium": _run_density,
    "aggregation": _run_density,
    "cahn-hilliard": _run_phase_field,
    "simplex-toy": _run_simplex_toy,
    "certify-theorems": _run_certify,
}


def _execute(config_path: str, force_certify: bool = False) -> int:
    try:
        cfg = load_config(config_path)
        if force_certify and cfg.experiment != "certify-theorems":
            raise ConfigError(
                "certify expects a [certify-theorems] config section, "
                f"got {cfg.experiment!r}"
            )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    started = time.perf_counter()
    outdir = cfg.output_dir
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        payload, audits_pass = _RUNNERS[cfg.experiment](cfg, outdir)
    except MDFlowError as exc:
        print(f"runtime failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1

    payload["experiment"] = cfg.experiment
    payload["config"] = dict(cfg.values)
    payload["wallClockSeconds"] = time.perf_counter() - started
    _write_json(outdir / "summary.json", payload)
    if not audits_pass:
        print("declared audits failed; see summary.json", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdflow",
        description="Structure-preserving mirror-descent experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="run an experiment preset from a config file")
    run_parser.add_argument("config", help="path to the INI config")
    cert_parser = sub.add_parser("certify", help="run the convergence-certificate suite")
    cert_parser.add_argument("config", help="path to the INI config")

    args = parser.parse_args(argv)
    return _execute(args.config, force_certify=args.command == "certify")


if __name__ == "__main__":
    sys.exit(main())
