"""Input-validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np

from mdflow.exceptions import DomainViolation, ShapeMismatch


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a contiguous 1-D float array, copying the input."""
    arr = np.array(x, dtype=float, copy=True).ravel()
    if arr.size == 0:
        raise ShapeMismatch(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name} contains non-finite entries")
    return arr


def check_same_length(a: np.ndarray, b: np.ndarray, name: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{name} have shapes {a.shape} and {b.shape}")


def check_positive_scalar(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_strictly_positive(u: np.ndarray, name: str = "u") -> None:
    """Domain guard for log-type maps: reject, never clamp."""
    if np.any(u <= 0.0):
        raise DomainViolation(f"{name} must be strictly positive (min = {u.min():.3g})")


def check_open_interval(u: np.ndarray, lo: float, hi: float, name: str = "u") -> None:
    if np.any(u <= lo) or np.any(u >= hi):
        raise DomainViolation(
            f"{name} must lie strictly inside ({lo}, {hi}); "
            f"range is [{u.min():.6g}, {u.max():.6g}]"
        )
