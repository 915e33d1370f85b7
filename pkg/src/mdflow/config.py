"""Run configuration: flat INI files with one section per experiment.

A config file contains exactly one section naming the experiment; keys
inside it override the experiment's defaults (which reproduce the desk-
scale figure parameter sets). Unknown keys and malformed values are
rejected, not ignored.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from mdflow.exceptions import ConfigError

EXPERIMENTS = (
    "porous-medium",
    "aggregation",
    "cahn-hilliard",
    "simplex-toy",
    "certify-theorems",
)

FAMILY_ALIASES = {
    "mirror": "mirror-descent",
    "mirror-descent": "mirror-descent",
    "variable-metric": "variable-metric",
    "quasi-newton": "quasi-newton",
}


def _positive(x: float) -> bool:
    return x > 0


def _nonneg_int(x: int) -> bool:
    return x >= 0


def _pos_int(x: int) -> bool:
    return x > 0


# key -> (python type, default, predicate or None, description of the constraint)
_GRID_KEYS = {
    "xLeft": (float, None, None, ""),
    "xRight": (float, None, None, ""),
    "Nx": (int, 50, lambda v: v >= 2, "must be >= 2"),
}
_TIME_KEYS = {
    "tau": (float, None, _positive, "must be positive"),
    "Nt": (int, None, _nonneg_int, "must be >= 0"),
    "snapshotEvery": (int, 0, _nonneg_int, "must be >= 0 (0 = first/last only)"),
}
_SOLVER_KEYS = {
    "eta": (float, None, _positive, "must be positive"),
    "tol": (float, 1e-6, _positive, "must be positive"),
    "iterMax": (int, 2000, _pos_int, "must be positive"),
    "family": (str, "mirror", lambda v: v in FAMILY_ALIASES, "must be mirror|variable-metric|quasi-newton"),
}
_OUT_KEYS = {"outputDir": (str, "mdflow-out", None, "")}

SCHEMAS = {
    "porous-medium": {
        **_GRID_KEYS, **_TIME_KEYS, **_SOLVER_KEYS, **_OUT_KEYS,
        "epsilon": (float, 0.005, _positive, "must be positive"),
        "m": (float, 2.0, lambda v: v > 1, "must exceed 1"),
        "t0": (float, 1e-3, _positive, "must be positive"),
        "C": (float, 0.8, _positive, "must be positive"),
    },
    "aggregation": {
        **_GRID_KEYS, **_TIME_KEYS, **_SOLVER_KEYS, **_OUT_KEYS,
        "epsilon": (float, 0.1, _positive, "must be positive"),
        "sigma": (float, 0.25, _positive, "must be positive"),
    },
    "cahn-hilliard": {
        **_GRID_KEYS, **_TIME_KEYS, **_SOLVER_KEYS, **_OUT_KEYS,
        "epsilon": (float, 0.5, _positive, "must be positive"),
        "epsilon1": (float, None, _positive, "must be positive"),
        "epsilon2": (float, None, _positive, "must be positive"),
        "alpha": (float, 0.1, _positive, "must be positive"),
        "potential": (str, "quadratic-well", lambda v: v in ("quadratic-well", "ginzburg-landau"), "must be quadratic-well|ginzburg-landau"),
    },
    "simplex-toy": {
        **_SOLVER_KEYS, **_OUT_KEYS,
        "n": (int, 5, lambda v: v >= 2, "must be >= 2"),
        "seed": (int, 42, None, ""),
        "steps": (int, 200, _pos_int, "must be positive"),
    },
    "certify-theorems": {
        **_OUT_KEYS,
        "seed": (int, 42, None, ""),
        "mdSteps": (int, 200, _pos_int, "must be positive"),
        "mdEta": (float, 0.3, _positive, "must be positive"),
        "flowTime": (float, 5.0, _positive, "must be positive"),
        "flowDt": (float, 1e-3, _positive, "must be positive"),
        "linearRateEta": (float, 0.0, lambda v: v >= 0, "must be >= 0 (0 = auto)"),
    },
}

# experiment defaults matching the reported figure parameter sets
PRESET_DEFAULTS = {
    "porous-medium": {
        "xLeft": -1.0, "xRight": 1.0, "Nx": 50,
        "tau": 2e-4, "Nt": 150, "eta": 0.2, "tol": 1e-8,
    },
    "aggregation": {
        "xLeft": -2.0, "xRight": 2.0, "Nx": 50,
        "tau": 0.016, "Nt": 188, "eta": 0.8, "tol": 1e-8,
    },
    "cahn-hilliard": {
        "xLeft": 0.0, "xRight": 1.0, "Nx": 50,
        "tau": 1e-3, "Nt": 1500, "eta": 0.02, "tol": 1e-6,
    },
    "simplex-toy": {"eta": 0.3},
    "certify-theorems": {},
}


@dataclass
class RunConfig:
    experiment: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def output_dir(self) -> Path:
        override = os.environ.get("MDFLOW_OUT")
        return Path(override if override else self.values["outputDir"])

    @property
    def family(self) -> str:
        return FAMILY_ALIASES[self.values["family"]] if "family" in self.values else "mirror-descent"


def load_config(path) -> RunConfig:
    """Parse and validate a config file; raises ConfigError on any defect."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case-sensitive
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    sections = parser.sections()
    if len(sections) != 1:
        raise ConfigError(
            f"config must contain exactly one experiment section, found {sections}"
        )
    experiment = sections[0]
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; choose one of {EXPERIMENTS}"
        )

    schema = SCHEMAS[experiment]
    values = {}
    for key, (typ, default, pred, hint) in schema.items():
        merged_default = PRESET_DEFAULTS[experiment].get(key, default)
        if merged_default is not None:
            values[key] = merged_default

    for key, raw in parser.items(experiment):
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment {experiment!r}")
        typ, _, pred, hint = schema[key]
        try:
            value = typ(raw) if typ is not str else raw.strip()
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: cannot read {raw!r} as {typ.__name__}") from exc
        if pred is not None and not pred(value):
            raise ConfigError(f"key {key!r} = {value!r} {hint}")
        values[key] = value

    if experiment == "cahn-hilliard":
        values.setdefault("epsilon1", values["epsilon"])
        values.setdefault("epsilon2", values["epsilon"])

    missing = [k for k in schema if k not in values]
    if missing:
        raise ConfigError(f"missing required keys for {experiment!r}: {missing}")
    return RunConfig(experiment=experiment, values=values)
