"""Linearly constrained convex problems and the in-step multiplier solve.

The multiplier solve is the workhorse of every mirror step: given the
current iterate it finds the vector c for which the dual update
``grad_map(next) = grad_map(current) - eta * (grad_f + A^T c)`` lands back
on the affine constraint set A u = b. For the entropy map with a sum
constraint this is a single normalization; otherwise it is a safeguarded
1-D Newton/bisection (one constraint row) or a damped Newton on the m-row
residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from mdflow.exceptions import (
    DegenerateSample,
    DomainViolation,
    MultiplierNotFound,
    SingularMetric,
)
from mdflow.mirror_maps import EntropyMap, MirrorMap, bregman_divergence
from mdflow.validation import as_vector

MULTIPLIER_REL_TOL = 1e-10
MULTIPLIER_ABS_TOL = 1e-12


@dataclass
class ConstrainedProblem:
    """Convex objective with gradient access and an affine constraint A u = b.

    ``constraint_matrix`` may be None or have zero rows, in which case the
    problem is unconstrained. ``hessian_action`` is optional and only needed
    by exact line searches and curvature diagnostics. The optional bounds
    describe the admissible box; they are never enforced by the solvers,
    only monitored.
    """

    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian_action: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    constraint_matrix: Optional[np.ndarray] = None
    constraint_rhs: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.constraint_matrix is not None:
            a = np.atleast_2d(np.asarray(self.constraint_matrix, dtype=float))
            if a.shape[0] == 0:
                a = None
                self.constraint_rhs = None
            else:
                b = as_vector(self.constraint_rhs, "constraint_rhs")
                if b.size != a.shape[0]:
                    raise ValueError("constraint_rhs length must match constraint rows")
                if np.linalg.matrix_rank(a) < a.shape[0]:
                    raise ValueError("constraint matrix must have full row rank")
                self.constraint_rhs = b
            self.constraint_matrix = a

    @property
    def m(self) -> int:
        return 0 if self.constraint_matrix is None else self.constraint_matrix.shape[0]

    def constraint_residual(self, u: np.ndarray) -> float:
        if self.m == 0:
            return 0.0
        r = self.constraint_matrix @ u - self.constraint_rhs
        return float(np.max(np.abs(r)))

    def grad_map(self, u: np.ndarray, c: np.ndarray) -> np.ndarray:
        """Constrained gradient direction grad_f(u) + A^T c."""
        g = self.gradient(u)
        if self.m:
            g = g + self.constraint_matrix.T @ c
        return g


def quadratic_problem(hessian, linear, constraint_matrix=None, constraint_rhs=None) -> ConstrainedProblem:
    """Build u -> u^T H u / 2 + g^T u with optional affine constraint."""
    h = np.asarray(hessian, dtype=float)
    g = as_vector(linear, "linear")

    return ConstrainedProblem(
        objective=lambda u: 0.5 * float(u @ (h @ u)) + float(g @ u),
        gradient=lambda u: h @ u + g,
        hessian_action=lambda u, v: h @ v,
        constraint_matrix=constraint_matrix,
        constraint_rhs=constraint_rhs,
    )


def entropy_linear_problem(potential) -> ConstrainedProblem:
    """Build sum(u log u) + v^T u on the unit simplex (the multiplicative-weights toy)."""
    v = as_vector(potential, "potential")
    n = v.size

    def obj(u):
        return float(u @ np.log(u)) + float(v @ u)

    return ConstrainedProblem(
        objective=obj,
        gradient=lambda u: np.log(u) + 1.0 + v,
        hessian_action=lambda u, w: w / u,
        constraint_matrix=np.ones((1, n)),
        constraint_rhs=np.ones(1),
        lower=np.zeros(n),
    )


def _constraint_tol(b: Optional[np.ndarray]) -> float:
    if b is None or b.size == 0 or np.max(np.abs(b)) == 0.0:
        return MULTIPLIER_ABS_TOL
    return MULTIPLIER_REL_TOL * float(np.max(np.abs(b)))


def _is_all_ones_row(a: np.ndarray) -> bool:
    return a.shape[0] == 1 and np.all(a[0] == 1.0)


def solve_multiplier(
    mirror_map: MirrorMap,
    problem: ConstrainedProblem,
    u: np.ndarray,
    eta: float,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """One mirror step with the multiplier chosen so the next iterate is feasible.

    Returns ``(c, u_next)`` with
    ``grad_map(u_next) = grad_map(u) - eta * (grad_f(u) + A^T c)`` and
    ``A u_next = b`` to within 1e-10 relative (1e-12 absolute for b = 0).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    u = np.asarray(u, dtype=float)
    g0 = mirror_map.gradient(u) - eta * problem.gradient(u)
    m = problem.m

    if m == 0:
        return np.zeros(0), mirror_map.inverse_gradient(g0)

    a = problem.constraint_matrix
    b = problem.constraint_rhs
    tol = _constraint_tol(b)

    if isinstance(mirror_map, EntropyMap) and _is_all_ones_row(a):
        # closed-form normalization: u(c) = exp((g0 - eta c)/eps - 1)
        eps = mirror_map.epsilon
        z = g0 / eps - 1.0
        log_mass = logsumexp(z)
        c = (eps / eta) * (log_mass - np.log(b[0]))
        u_next = np.exp(z - log_mass + np.log(b[0]))
        return np.array([c]), u_next

    def primal(c_vec):
        dual = g0 - eta * (a.T @ c_vec)
        un = mirror_map.inverse_gradient(dual)
        if not np.all(np.isfinite(un)):
            raise DomainViolation("dual point left the range of the mirror gradient")
        return un

    if m == 1:
        return _solve_multiplier_1d(mirror_map, primal, a[0], float(b[0]), eta, tol, max_iter)
    return _solve_multiplier_newton(mirror_map, primal, a, b, eta, tol, max_iter)


def _solve_multiplier_1d(mirror_map, primal, row, rhs, eta, tol, max_iter):
    """Safeguarded Newton with a bisection bracket on the scalar residual.

    r(c) = row . u(c) - rhs is strictly decreasing, so a sign-changing
    bracket exists; Newton steps are taken only while they stay inside it.
    """

    def residual(c):
        return float(row @ primal(np.array([c]))) - rhs

    lo, hi = -1.0, 1.0
    r_lo, r_hi = residual(lo), residual(hi)
    for _ in range(200):
        if r_lo > 0.0 >= r_hi or r_lo >= 0.0 > r_hi:
            break
        if r_lo < 0.0:  # both negative: move left (r decreasing in c)
            lo, hi, r_hi = 2 * lo, lo, r_lo
            r_lo = residual(lo)
        else:  # both positive: move right
            lo, hi, r_lo = hi, 2 * hi, r_hi
            r_hi = residual(hi)
    else:
        raise MultiplierNotFound("could not bracket the multiplier")

    c = 0.5 * (lo + hi)
    for _ in range(max_iter):
        un = primal(np.array([c]))
        r = float(row @ un) - rhs
        if abs(r) <= tol:
            return np.array([c]), un
        if r > 0.0:
            lo = c
        else:
            hi = c
        c_new = None
        try:
            slope = -eta * float(row @ mirror_map.hessian_solve(un, row))
            if slope < 0.0 and np.isfinite(slope):
                c_new = c - r / slope
        except SingularMetric:
            pass
        if c_new is None or not (lo < c_new < hi):
            c_new = 0.5 * (lo + hi)
        c = c_new
    raise MultiplierNotFound(f"1-D multiplier search exceeded {max_iter} iterations")


def _solve_multiplier_newton(mirror_map, primal, a, b, eta, tol, max_iter):
    """Damped Newton on the m-dimensional feasibility residual."""
    m = a.shape[0]
    c = np.zeros(m)
    un = primal(c)
    r = a @ un - b
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return c, un
        jac = np.empty((m, m))
        for i in range(m):
            jac[:, i] = -eta * (a @ mirror_map.hessian_solve(un, a[i]))
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise MultiplierNotFound("singular multiplier Jacobian") from exc
        t = 1.0
        norm0 = np.linalg.norm(r)
        for _ in range(40):
            c_try = c + t * step
            try:
                u_try = primal(c_try)
            except DomainViolation:
                t *= 0.5
                continue
            r_try = a @ u_try - b
            if np.linalg.norm(r_try) < norm0:
                c, un, r = c_try, u_try, r_try
                break
            t *= 0.5
        else:
            raise MultiplierNotFound("multiplier backtracking stalled")
    raise MultiplierNotFound(f"multiplier Newton exceeded {max_iter} iterations")


def strong_convexity_ratio(
    mirror_map: MirrorMap,
    problem: ConstrainedProblem,
    samples,
    reference: np.ndarray,
) -> float:
    """Estimate mu = min over samples of D_f(ref, u) / D_Phi(ref, u).

    The ratio predicts the linear convergence rate of both the continuous
    flow and the fixed-step iteration; a well-chosen map drives it toward 1.
    """
    reference = np.asarray(reference, dtype=float)
    f_ref = problem.objective(reference)
    best = np.inf
    for sample in samples:
        s = np.asarray(sample, dtype=float)
        d_phi = bregman_divergence(mirror_map, reference, s)
        if d_phi <= 0.0:
            raise DegenerateSample("sample coincides with the reference point")
        d_f = f_ref - problem.objective(s) - float(problem.gradient(s) @ (reference - s))
        best = min(best, d_f / d_phi)
    if not np.isfinite(best):
        raise DegenerateSample("no valid samples supplied")
    return float(best)
