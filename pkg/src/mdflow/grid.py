"""Uniform 1-D cell-centered mesh and the mass-preserving weighted Laplacian.

The operator assembled here is the discrete form of ``-d/dx (w(x) d/dx)``
with no-flux boundary rows: edge conductances are arithmetic means of the
two adjacent cell weights, and the first/last rows drop the outer face.
Every column sums to zero, so the operator preserves the cell-sum (mass)
of anything it is applied to, and constants are in its kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded, solveh_banded

from mdflow.exceptions import (
    DisconnectedOperator,
    LinearSolveFailure,
    NegativeWeight,
    RhsNotInRange,
    ShapeMismatch,
)
from mdflow.validation import as_vector


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered mesh on [x_left, x_right] with n_cells cells."""

    x_left: float
    x_right: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError(f"n_cells must be >= 2, got {self.n_cells}")
        if not self.x_right > self.x_left:
            raise ValueError("x_right must exceed x_left")

    @property
    def dx(self) -> float:
        return (self.x_right - self.x_left) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        j = np.arange(1, self.n_cells + 1)
        return self.x_left + (j - 0.5) * self.dx


@dataclass
class Field:
    """A real-valued function sampled at the cell centers of a grid."""

    grid: Grid1D
    values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = as_vector(self.values, "values")
        if self.values.size != self.grid.n_cells:
            raise ShapeMismatch(
                f"field has {self.values.size} values for a grid of "
                f"{self.grid.n_cells} cells"
            )

    def integrate(self) -> float:
        """Midpoint-rule integral dx * sum(values)."""
        return self.grid.dx * float(self.values.sum())

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)


def integrate(f: Field) -> float:
    return f.integrate()


def _values(u, n: int) -> np.ndarray:
    v = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    if v.shape != (n,):
        raise ShapeMismatch(f"expected a vector of length {n}, got shape {v.shape}")
    return v


class WeightedLaplacianOp:
    """Symmetric tridiagonal discretization of -d/dx(w d/dx) with no-flux rows.

    Edge conductances are w_{j+1/2} = (w_j + w_{j+1}) / 2; the outermost
    faces carry zero conductance, which encodes either a vanishing weight or
    a vanishing flux at the boundary. The result is positive semidefinite
    with the constant vector in its kernel and zero column sums.

    Parameters
    ----------
    weights : Field
        Cell values of the weight (a density or a mobility), elementwise >= 0
        unless ``allow_signed`` is set.
    allow_signed : bool
        Permit negative weights. Used by the unguarded explicit schemes,
        whose iterates can leave the admissible set; the assembled stencil is
        the same formula, but positive semidefiniteness is no longer implied.
    """

    def __init__(self, weights: Field, allow_signed: bool = False):
        w = weights.values
        if not allow_signed and np.any(w < 0.0):
            raise NegativeWeight(f"weights must be >= 0 (min = {w.min():.3g})")
        self.grid = weights.grid
        self.weights = w.copy()
        dx2 = self.grid.dx ** 2
        # interior edge conductances, length n-1
        self.edge_weights = 0.5 * (w[:-1] + w[1:])
        self.off_diag = -self.edge_weights / dx2
        pad = np.zeros(1)
        self.main_diag = (
            np.concatenate([pad, self.edge_weights]) + np.concatenate([self.edge_weights, pad])
        ) / dx2

    @property
    def n(self) -> int:
        return self.grid.n_cells

    def apply(self, u) -> np.ndarray:
        """Matrix-vector product in O(n)."""
        v = _values(u, self.n)
        out = self.main_diag * v
        out[:-1] += self.off_diag * v[1:]
        out[1:] += self.off_diag * v[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        m = np.diag(self.main_diag)
        idx = np.arange(self.n - 1)
        m[idx, idx + 1] = self.off_diag
        m[idx + 1, idx] = self.off_diag
        return m

    def _components(self) -> list[slice]:
        """Maximal index ranges not separated by a zero edge conductance."""
        cuts = np.nonzero(self.edge_weights == 0.0)[0]
        starts = np.concatenate([[0], cuts + 1])
        stops = np.concatenate([cuts + 1, [self.n]])
        return [slice(a, b) for a, b in zip(starts, stops)]

    def solve_pseudo_inverse(self, rhs) -> np.ndarray:
        """Solve D x = rhs for the mean-zero x (Moore-Penrose on the range).

        The operator is singular with the constants of each connected
        component in its kernel. Within a component the solve pins the last
        unknown to zero, solves the resulting positive-definite tridiagonal
        system, and shifts the component to zero mean afterwards; the last
        equation holds automatically because columns sum to zero.
        """
        b = _values(rhs, self.n)
        scale = float(np.abs(b).sum())
        if abs(b.sum()) > 1e-8 * max(scale, 1e-300):
            raise RhsNotInRange(
                f"rhs sum {b.sum():.3g} is not zero relative to |rhs| = {scale:.3g}"
            )
        x = np.zeros(self.n)
        components = self._components()
        for comp in components:
            bc = b[comp]
            size = bc.size
            if len(components) > 1 and abs(bc.sum()) > 1e-8 * max(scale, 1e-300):
                raise DisconnectedOperator(
                    "zero edge weights split the operator and a component of "
                    "rhs has nonzero sum"
                )
            if size == 1:
                continue  # isolated cell: row is zero and rhs there is ~0
            # Reduced SPD system on the first size-1 unknowns of the component.
            d = self.main_diag[comp][:-1]
            off = self.off_diag[comp.start : comp.stop - 1]
            # rhs within tolerance of the range: project exactly onto it
            reduced_rhs = bc[:-1] - bc.sum() / size
            if size == 2:
                sol = reduced_rhs / d
            else:
                ab = np.zeros((2, size - 1))
                ab[0, 1:] = off[:-1]
                ab[1, :] = d
                sol = solveh_banded(ab, reduced_rhs, lower=False)
            xc = np.concatenate([sol, [0.0]])
            x[comp] = xc - xc.mean()
        return x

    def h_minus1_norm_sq(self, f) -> float:
        """Quadratic form dx * f^T D^+ f; the weighted H^-1 norm squared."""
        v = _values(f, self.n)
        val = self.grid.dx * float(v @ self.solve_pseudo_inverse(v))
        if val < 0.0:
            # PSD up to rounding; clip the noise floor only
            if val > -1e-12 * max(1.0, float(v @ v)):
                return 0.0
            raise RhsNotInRange(f"quadratic form came out negative: {val:.3g}")
        return val


def assemble_weighted_laplacian(weights: Field, allow_signed: bool = False) -> WeightedLaplacianOp:
    return WeightedLaplacianOp(weights, allow_signed=allow_signed)


def solve_tridiagonal(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Direct banded solve (partial pivoting) of a general tridiagonal system."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = sup
    ab[1, :] = diag
    ab[2, :-1] = sub
    try:
        return solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveFailure("tridiagonal solve failed") from exc
