"""Mirror maps: strictly convex generators and their Bregman divergences.

A mirror map supplies the geometry of a mirror-descent iteration through
four callables: the value of the generator, its gradient (the primal-to-dual
transform), the Hessian action, and, where tractable, the inverse-gradient
(dual-to-primal) solve. The Bregman divergence induced by the generator is
the progress measure of every convergence statement in :mod:`mdflow.solvers`.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from mdflow.exceptions import DomainViolation, SingularMetric
from mdflow.grid import WeightedLaplacianOp
from mdflow.validation import (
    as_vector,
    check_open_interval,
    check_same_length,
    check_strictly_positive,
)


class MirrorMap(ABC):
    """Convex generator with gradient, Hessian action and domain guard.

    Subclasses may additionally declare a strong-convexity norm: a pair of
    callables ``norm_sq`` / ``dual_norm_sq`` such that the divergence
    dominates half the squared norm of the difference. Maps without a
    declared norm return ``None`` from both, and norm-based certificates
    refuse to run on them.
    """

    @abstractmethod
    def value(self, u: np.ndarray) -> float: ...

    @abstractmethod
    def gradient(self, u: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hessian_action(self, u: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    def hessian_solve(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise SingularMetric(f"{type(self).__name__} does not expose a Hessian solve")

    def inverse_gradient(self, g: np.ndarray) -> np.ndarray:
        """Solve grad(u) = g for u. Composite PDE maps delegate this to the
        application's preconditioned Newton loops and do not implement it."""
        raise NotImplementedError(
            f"{type(self).__name__} has no pointwise inverse gradient"
        )

    def check_domain(self, u: np.ndarray) -> None:
        """Raise DomainViolation if u is outside the generator's domain."""

    def in_domain(self, u: np.ndarray) -> bool:
        try:
            self.check_domain(u)
        except DomainViolation:
            return False
        return True

    # strong-convexity declaration (None = undeclared)
    def norm_sq(self, d: np.ndarray):
        return None

    def dual_norm_sq(self, g: np.ndarray):
        return None


class QuadraticMap(MirrorMap):
    """Generator u -> u^T W u / 2 for a fixed SPD weight W (identity default).

    ``weight`` may be None (identity), a 1-D array (diagonal), or a dense
    SPD matrix. The divergence equals exactly half the squared W-norm of the
    difference, so the map is 1-strongly convex in that norm.
    """

    def __init__(self, weight=None):
        self.weight = None if weight is None else np.asarray(weight, dtype=float)
        self._chol = None
        if self.weight is not None and self.weight.ndim == 2:
            try:
                self._chol = cho_factor(self.weight)
            except np.linalg.LinAlgError as exc:
                raise SingularMetric("quadratic weight matrix is not SPD") from exc

    def _apply_w(self, v):
        if self.weight is None:
            return v.copy()
        if self.weight.ndim == 1:
            return self.weight * v
        return self.weight @ v

    def _solve_w(self, v):
        if self.weight is None:
            return v.copy()
        if self.weight.ndim == 1:
            return v / self.weight
        return cho_solve(self._chol, v)

    def value(self, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * float(u @ self._apply_w(u))

    def gradient(self, u):
        return self._apply_w(np.asarray(u, dtype=float))

    def hessian_action(self, u, v):
        return self._apply_w(np.asarray(v, dtype=float))

    def hessian_solve(self, u, v):
        return self._solve_w(np.asarray(v, dtype=float))

    def inverse_gradient(self, g):
        return self._solve_w(np.asarray(g, dtype=float))

    def norm_sq(self, d):
        d = np.asarray(d, dtype=float)
        return float(d @ self._apply_w(d))

    def dual_norm_sq(self, g):
        g = np.asarray(g, dtype=float)
        return float(g @ self._solve_w(g))


class EntropyMap(MirrorMap):
    """Scaled negative entropy eps * sum(u log u) on the strictly positive orthant.

    The inverse gradient is the componentwise exponential, so iterates built
    through it are positive by construction. On unit-mass vectors the
    divergence is eps times the Kullback-Leibler divergence, which dominates
    (eps/2) ||x - y||_1^2; the declared norm is sqrt(eps) ||.||_1 with dual
    ||.||_inf / sqrt(eps).
    """

    def __init__(self, epsilon: float = 1.0):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)

    def check_domain(self, u):
        check_strictly_positive(np.asarray(u, dtype=float), "entropy-map argument")

    def value(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        return self.epsilon * float(u @ np.log(u))

    def gradient(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        return self.epsilon * (np.log(u) + 1.0)

    def hessian_action(self, u, v):
        return self.epsilon * np.asarray(v, dtype=float) / np.asarray(u, dtype=float)

    def hessian_solve(self, u, v):
        return np.asarray(u, dtype=float) * np.asarray(v, dtype=float) / self.epsilon

    def inverse_gradient(self, g):
        return np.exp(np.asarray(g, dtype=float) / self.epsilon - 1.0)

    def norm_sq(self, d):
        return self.epsilon * float(np.abs(d).sum()) ** 2

    def dual_norm_sq(self, g):
        return float(np.max(np.abs(g))) ** 2 / self.epsilon


class H1EntropyMap(MirrorMap):
    """Weighted H^-1 proximity to an anchor density plus a scaled entropy.

    The quadratic part measures distance to ``anchor`` in the pseudo-inverse
    metric of a weighted Laplacian (so it is finite only on vectors with the
    anchor's mass), and the entropy part keeps iterates positive. The
    inverse gradient is a genuinely coupled nonlinear system and is owned by
    the density-flow module's preconditioned Newton solver.
    """

    def __init__(self, op: WeightedLaplacianOp, anchor: np.ndarray, tau: float, epsilon: float):
        if tau <= 0 or epsilon <= 0:
            raise ValueError("tau and epsilon must be positive")
        self.op = op
        self.anchor = as_vector(anchor, "anchor")
        self.tau = float(tau)
        self.epsilon = float(epsilon)
        self._dx = op.grid.dx

    def check_domain(self, u):
        check_strictly_positive(np.asarray(u, dtype=float), "density")

    def value(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        d = u - self.anchor
        quad = 0.5 / self.tau * self.op.h_minus1_norm_sq(d)
        return quad + self.epsilon * self._dx * float(u @ np.log(u))

    def gradient(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        d = u - self.anchor
        return self._dx * (
            self.op.solve_pseudo_inverse(d) / self.tau
            + self.epsilon * (np.log(u) + 1.0)
        )

    def hessian_action(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return self._dx * (
            self.op.solve_pseudo_inverse(v - v.mean()) / self.tau + self.epsilon * v / u
        )


class DoubleLogBarrierMap(MirrorMap):
    """Weighted H^-1 proximity plus a two-sided log barrier on (-1, 1).

    The barrier (1+u)log(1+u) and (1-u)log(1-u) terms blow up at the
    interval ends, which is what keeps the phase-field iterates inside
    (-1, 1) without any projection.
    """

    def __init__(self, op: WeightedLaplacianOp, anchor, tau: float, eps1: float, eps2: float):
        if min(tau, eps1, eps2) <= 0:
            raise ValueError("tau, eps1, eps2 must be positive")
        self.op = op
        self.anchor = as_vector(anchor, "anchor")
        self.tau = float(tau)
        self.eps1 = float(eps1)
        self.eps2 = float(eps2)
        self._dx = op.grid.dx

    def check_domain(self, u):
        check_open_interval(np.asarray(u, dtype=float), -1.0, 1.0, "order parameter")

    def value(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        d = u - self.anchor
        quad = 0.5 / self.tau * self.op.h_minus1_norm_sq(d)
        barrier = self.eps1 * float((1 + u) @ np.log1p(u)) + self.eps2 * float(
            (1 - u) @ np.log1p(-u)
        )
        return quad + self._dx * barrier

    def gradient(self, u):
        u = np.asarray(u, dtype=float)
        self.check_domain(u)
        d = u - self.anchor
        barrier = (
            self.eps1 * (np.log1p(u) + 1.0) - self.eps2 * (np.log1p(-u) + 1.0)
        )
        return self._dx * (self.op.solve_pseudo_inverse(d) / self.tau + barrier)

    def hessian_action(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        curvature = self.eps1 / (1.0 + u) + self.eps2 / (1.0 - u)
        return self._dx * (
            self.op.solve_pseudo_inverse(v - v.mean()) / self.tau + curvature * v
        )


def bregman_divergence(mirror_map: MirrorMap, x, y) -> float:
    """D(x, y) = value(x) - value(y) - <grad(y), x - y>, a nonnegative real."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    check_same_length(x, y)
    mirror_map.check_domain(x)
    mirror_map.check_domain(y)
    return (
        mirror_map.value(x)
        - mirror_map.value(y)
        - float(mirror_map.gradient(y) @ (x - y))
    )
