"""Iteration families for linearly constrained convex minimization.

Three discrete families share one geometry: mirror descent updates the dual
variable and maps back through the inverse gradient; the variable-metric
iteration preconditions an explicit step with the mirror map's Hessian; the
quasi-Newton iteration replaces that Hessian with a secant-updated matrix.
All three keep iterates on the affine constraint set, either through the
in-step multiplier solve or through an exact Schur-complement system.
A classical fourth-order Runge-Kutta integrator follows the continuous flow
that all of them discretize, and the certification helpers re-evaluate the
convergence bounds from recorded iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from mdflow.constrained import ConstrainedProblem, solve_multiplier
from mdflow.exceptions import (
    DomainViolation,
    LineSearchFailure,
    MissingDiagnostics,
    SingularMetric,
)
from mdflow.mirror_maps import MirrorMap, bregman_divergence
from mdflow.validation import as_vector, check_positive_scalar

CONVERGED = "converged"
MAX_ITER = "max-iter"


@dataclass
class SolveReport:
    """Per-iterate diagnostics of a solve.

    All lists have one entry per iterate (initial point included). Fields
    describing the step leaving an iterate (step size, multiplier, dual
    norms) are NaN/neutral on the final row; quasi-Newton extras are NaN
    where no secant update happened.
    """

    objective_values: list[float] = field(default_factory=list)
    constraint_residuals: list[float] = field(default_factory=list)
    grad_map_norms: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    step_accepted: list[bool] = field(default_factory=list)
    in_domain: list[bool] = field(default_factory=list)
    multipliers: list[np.ndarray] = field(default_factory=list)
    termination: str = MAX_ITER
    iterates: Optional[list[np.ndarray]] = None
    bregman_to_reference: Optional[list[float]] = None
    grad_map_dual_sq: Optional[list[float]] = None
    dennis_more: Optional[list[float]] = None
    secant_residuals: Optional[list[float]] = None
    metric_drift: Optional[list[float]] = None
    qn_dual_sq: Optional[list[float]] = None

    @property
    def n_steps(self) -> int:
        return len(self.objective_values) - 1


def _rel_change(u_next: np.ndarray, u: np.ndarray) -> float:
    denom = np.linalg.norm(u)
    return float(np.linalg.norm(u_next - u)) / (denom if denom > 0 else 1.0)


def sufficient_descent_step(
    problem: ConstrainedProblem,
    mirror_map: MirrorMap,
    u: np.ndarray,
    alpha: float,
    eta_init: float,
    max_halvings: int = 60,
):
    """Backtracking mirror step: halve eta until the descent test holds.

    Accepts the first eta <= min(eta_init, 1) with
    f(next) <= f(u) + alpha * grad_f(u) . (next - u), alpha in (0, 0.5).
    Returns (eta, u_next, c).
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    eta = min(check_positive_scalar(eta_init, "eta_init"), 1.0)
    f0 = problem.objective(u)
    g0 = problem.gradient(u)
    for _ in range(max_halvings + 1):
        c, u_next = solve_multiplier(mirror_map, problem, u, eta)
        if problem.objective(u_next) <= f0 + alpha * float(g0 @ (u_next - u)):
            return eta, u_next, c
        eta *= 0.5
    raise LineSearchFailure(f"no sufficient descent after {max_halvings} halvings")


def _check_initial(problem: ConstrainedProblem, u0: np.ndarray) -> None:
    resid = problem.constraint_residual(u0)
    scale = 1.0
    if problem.m and np.max(np.abs(problem.constraint_rhs)) > 0:
        scale = float(np.max(np.abs(problem.constraint_rhs)))
    if resid > 1e-8 * scale:
        raise ValueError(f"initial iterate is infeasible (residual {resid:.3g})")


def _schur_multiplier(metric_solve, problem, grad):
    """Multiplier from A M^-1 A^T c = -A M^-1 grad, making A * step = 0 exactly."""
    if problem.m == 0:
        return np.zeros(0), grad
    a = problem.constraint_matrix
    m = problem.m
    s = np.empty((m, m))
    for i in range(m):
        s[:, i] = a @ metric_solve(a[i])
    try:
        c = np.linalg.solve(s, -(a @ metric_solve(grad)))
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("Schur system for the multiplier is singular") from exc
    return c, grad + a.T @ c


class _ReportingSolver(BaseEstimator):
    """Shared fit plumbing: validates inputs, runs `_solve`, stores results."""

    def fit(self, problem: ConstrainedProblem, u0, reference=None):
        u0 = as_vector(u0, "u0")
        _check_initial(problem, u0)
        if reference is not None:
            reference = as_vector(reference, "reference")
        report, solution = self._solve(problem, u0, reference)
        self.report_ = report
        self.solution_ = solution
        self.n_iter_ = report.n_steps
        return self


class MirrorDescent(_ReportingSolver):
    """Mirror descent with an in-step multiplier keeping iterates feasible.

    Parameters
    ----------
    mirror_map : MirrorMap
        Geometry of the update; its inverse gradient defines the step.
    step_size : float
        Fixed eta, or the initial eta when line_search='sufficient-descent'.
    line_search : {'fixed', 'sufficient-descent'}
    armijo_alpha : float
        Descent-fraction parameter in (0, 0.5) for the backtracking search.
    rel_tol : float
        Stop when ||u_next - u|| / ||u|| falls below this.
    """

    def __init__(
        self,
        mirror_map=None,
        step_size=1.0,
        max_iter=200,
        rel_tol=1e-6,
        line_search="fixed",
        armijo_alpha=0.25,
        store_iterates=True,
    ):
        self.mirror_map = mirror_map
        self.step_size = step_size
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.line_search = line_search
        self.armijo_alpha = armijo_alpha
        self.store_iterates = store_iterates

    def _solve(self, problem, u0, reference):
        mm = self.mirror_map
        if mm is None:
            raise ValueError("mirror_map is required")
        if self.line_search not in ("fixed", "sufficient-descent"):
            raise ValueError(f"unknown line_search {self.line_search!r}")
        check_positive_scalar(self.step_size, "step_size")
        mm.check_domain(u0)

        report = SolveReport(iterates=[] if self.store_iterates else None)
        track_dual = mm.dual_norm_sq(u0) is not None
        if track_dual:
            report.grad_map_dual_sq = []
        if reference is not None:
            report.bregman_to_reference = []
        track_dm = (
            reference is not None and problem.hessian_action is not None
        )
        if track_dm:
            report.dennis_more = []

        u = u0
        for _ in range(self.max_iter):
            if self.line_search == "sufficient-descent":
                eta, u_next, c = sufficient_descent_step(
                    problem, mm, u, self.armijo_alpha, self.step_size
                )
            else:
                eta = self.step_size
                c, u_next = solve_multiplier(mm, problem, u, eta)
            self._record(report, problem, mm, u, c, eta, reference, track_dual)
            if track_dm:
                report.dennis_more.append(
                    _dennis_more_gap(problem, mm, u, u_next, reference)
                )
            changed = _rel_change(u_next, u)
            u = u_next
            if changed <= self.rel_tol:
                report.termination = CONVERGED
                break
        # close the report with the final iterate's own multiplier
        c_final, _ = solve_multiplier(mm, problem, u, self.step_size)
        self._record(report, problem, mm, u, c_final, np.nan, reference, track_dual)
        if track_dm:
            report.dennis_more.append(np.nan)
        return report, u

    @staticmethod
    def _record(report, problem, mm, u, c, eta, reference, track_dual):
        gm = problem.grad_map(u, c)
        report.objective_values.append(problem.objective(u))
        report.constraint_residuals.append(problem.constraint_residual(u))
        report.grad_map_norms.append(float(np.linalg.norm(gm)))
        report.step_sizes.append(eta)
        report.step_accepted.append(True)
        report.in_domain.append(mm.in_domain(u))
        report.multipliers.append(np.asarray(c, dtype=float).copy())
        if report.iterates is not None:
            report.iterates.append(u.copy())
        if track_dual:
            report.grad_map_dual_sq.append(mm.dual_norm_sq(gm))
        if reference is not None:
            report.bregman_to_reference.append(bregman_divergence(mm, reference, u))


def _dennis_more_gap(problem, mm, u, u_next, reference):
    """||(G_k - hess_f(ref)) du|| / ||du|| with G_k the Simpson-averaged map Hessian."""
    du = u_next - u
    norm = np.linalg.norm(du)
    if norm == 0:
        return 0.0
    g_avg = (
        mm.hessian_action(u, du)
        + 4.0 * mm.hessian_action(0.5 * (u + u_next), du)
        + mm.hessian_action(u_next, du)
    ) / 6.0
    return float(np.linalg.norm(g_avg - problem.hessian_action(reference, du)) / norm)


class VariableMetric(_ReportingSolver):
    """Explicit iteration preconditioned by the mirror map's Hessian.

    Each step solves hess_map(u) du = -eta (grad_f + A^T c) with c from the
    exact Schur system, so A du = 0 and feasibility is preserved. There is
    no domain guard: iterates may leave the map's domain, which is recorded
    in the report rather than prevented.
    """

    def __init__(self, mirror_map=None, step_size=1.0, max_iter=200,
                 rel_tol=1e-6, store_iterates=True):
        self.mirror_map = mirror_map
        self.step_size = step_size
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.store_iterates = store_iterates

    def _solve(self, problem, u0, reference):
        mm = self.mirror_map
        if mm is None:
            raise ValueError("mirror_map is required")
        check_positive_scalar(self.step_size, "step_size")
        report = SolveReport(iterates=[] if self.store_iterates else None)
        track_dual = mm.dual_norm_sq(u0) is not None
        if track_dual:
            report.grad_map_dual_sq = []
        if reference is not None:
            report.bregman_to_reference = []

        u = u0
        for _ in range(self.max_iter):
            grad = problem.gradient(u)
            c, gm = _schur_multiplier(lambda v: mm.hessian_solve(u, v), problem, grad)
            step = mm.hessian_solve(u, gm)
            u_next = u - self.step_size * step
            self._record(report, problem, mm, u, c, gm, track_dual, reference)
            changed = _rel_change(u_next, u)
            u = u_next
            if changed <= self.rel_tol:
                report.termination = CONVERGED
                break
        grad = problem.gradient(u)
        c, gm = _schur_multiplier(lambda v: mm.hessian_solve(u, v), problem, grad)
        self._record(report, problem, mm, u, c, gm, track_dual, reference)
        return report, u

    @staticmethod
    def _record(report, problem, mm, u, c, gm, track_dual, reference):
        report.objective_values.append(problem.objective(u))
        report.constraint_residuals.append(problem.constraint_residual(u))
        report.grad_map_norms.append(float(np.linalg.norm(gm)))
        report.step_sizes.append(np.nan)
        report.step_accepted.append(True)
        report.in_domain.append(mm.in_domain(u))
        report.multipliers.append(np.asarray(c, dtype=float).copy())
        if report.iterates is not None:
            report.iterates.append(u.copy())
        if track_dual:
            report.grad_map_dual_sq.append(mm.dual_norm_sq(gm))
        if reference is not None:
            ok = mm.in_domain(u)
            report.bregman_to_reference.append(
                bregman_divergence(mm, reference, u) if ok else np.nan
            )


class QuasiNewton(_ReportingSolver):
    """Secant iteration: a dense SPD matrix updated so the secant identity
    B_next (u_next - u) = grad_f(u_next) - grad_f(u) holds exactly.

    The update is the standard BFGS rank-two correction with a curvature
    skip (update dropped when y.s <= 0, recorded in the report). The
    multiplier uses the same Schur system as the variable-metric family
    with B in place of the map Hessian.
    """

    def __init__(self, step_size=1.0, max_iter=200, rel_tol=1e-6,
                 initial_matrix=None, line_search="fixed", store_iterates=True):
        self.step_size = step_size
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.initial_matrix = initial_matrix
        self.line_search = line_search
        self.store_iterates = store_iterates

    def _solve(self, problem, u0, reference):
        if self.line_search not in ("fixed", "exact"):
            raise ValueError(f"unknown line_search {self.line_search!r}")
        if self.line_search == "exact" and problem.hessian_action is None:
            raise ValueError("exact line search needs the problem Hessian action")
        check_positive_scalar(self.step_size, "step_size")
        n = u0.size
        b = np.eye(n) if self.initial_matrix is None else np.array(
            self.initial_matrix, dtype=float
        )

        report = SolveReport(
            iterates=[] if self.store_iterates else None,
            secant_residuals=[np.nan],
            metric_drift=[np.nan],
            qn_dual_sq=[],
        )
        u = u0
        grad = problem.gradient(u)
        for _ in range(self.max_iter):
            c, gm = _schur_multiplier(lambda v: np.linalg.solve(b, v), problem, grad)
            direction = -np.linalg.solve(b, gm)
            self._record(report, problem, u, c, gm, direction)
            t = self.step_size
            if self.line_search == "exact":
                curv = float(direction @ problem.hessian_action(u, direction))
                t = -float(grad @ direction) / curv if curv > 0 else self.step_size
            u_next = u + t * direction
            grad_next = problem.gradient(u_next)
            s = u_next - u
            y = grad_next - grad
            ys = float(y @ s)
            if ys > 0.0 and np.isfinite(ys):
                b_prev = b
                bs = b @ s
                b = b - np.outer(bs, bs) / float(s @ bs) + np.outer(y, y) / ys
                report.secant_residuals.append(float(np.linalg.norm(b @ s - y)))
                report.metric_drift.append(
                    float(np.linalg.norm(b @ np.linalg.inv(b_prev) - np.eye(n), 2))
                )
            else:
                # curvature failure: skip the update, keep the step
                report.secant_residuals.append(np.nan)
                report.metric_drift.append(np.nan)
            changed = _rel_change(u_next, u)
            u, grad = u_next, grad_next
            if changed <= self.rel_tol:
                report.termination = CONVERGED
                break
        c, gm = _schur_multiplier(lambda v: np.linalg.solve(b, v), problem, grad)
        self._record(report, problem, u, c, gm, np.zeros(n))
        self.secant_matrix_ = b
        return report, u

    @staticmethod
    def _record(report, problem, u, c, gm, direction):
        report.objective_values.append(problem.objective(u))
        report.constraint_residuals.append(problem.constraint_residual(u))
        report.grad_map_norms.append(float(np.linalg.norm(gm)))
        report.step_sizes.append(np.nan)
        report.step_accepted.append(True)
        report.in_domain.append(True)
        report.multipliers.append(np.asarray(c, dtype=float).copy())
        report.qn_dual_sq.append(-float(gm @ direction))
        if report.iterates is not None:
            report.iterates.append(u.copy())


@dataclass
class FlowTrajectory:
    """States of the preconditioned gradient flow sampled at uniform times."""

    times: np.ndarray
    states: np.ndarray  # (n_times, n)
    bregman: Optional[np.ndarray] = None

    def average_state(self, horizon: float) -> np.ndarray:
        """Trapezoid-rule time average of u(t) over [0, horizon]."""
        mask = self.times <= horizon * (1 + 1e-12)
        t = self.times[mask]
        if t.size < 2:
            raise ValueError("horizon shorter than one time step")
        trapezoid = getattr(np, "trapezoid", np.trapz)
        return trapezoid(self.states[mask], t, axis=0) / (t[-1] - t[0])


def integrate_flow(
    problem: ConstrainedProblem,
    mirror_map: MirrorMap,
    u0,
    total_time: float,
    dt: float,
    reference=None,
) -> FlowTrajectory:
    """Classical RK4 on du/dt = -hess_map(u)^{-1} (grad_f(u) + A^T c(u)).

    The multiplier is resolved from the Schur system at every stage, so
    A u(t) = b is an invariant of the discrete flow as well. A stage point
    outside the map's domain raises DomainViolation; the caller is expected
    to halve dt and retry.
    """
    u0 = as_vector(u0, "u0")
    _check_initial(problem, u0)
    check_positive_scalar(dt, "dt")
    n_steps = int(round(total_time / dt))
    if n_steps < 1 or abs(n_steps * dt - total_time) > 1e-9 * total_time:
        raise ValueError("total_time must be a multiple of dt")

    def rhs(u):
        mirror_map.check_domain(u)
        grad = problem.gradient(u)
        _, gm = _schur_multiplier(
            lambda v: mirror_map.hessian_solve(u, v), problem, grad
        )
        return -mirror_map.hessian_solve(u, gm)

    states = np.empty((n_steps + 1, u0.size))
    states[0] = u0
    u = u0.copy()
    for i in range(n_steps):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        u = u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        states[i + 1] = u
    times = dt * np.arange(n_steps + 1)
    bregman = None
    if reference is not None:
        reference = as_vector(reference, "reference")
        bregman = np.array(
            [bregman_divergence(mirror_map, reference, s) for s in states]
        )
    return FlowTrajectory(times=times, states=states, bregman=bregman)


@dataclass
class CertificateResult:
    """Outcome of re-evaluating a convergence bound from recorded data."""

    mode: str
    slacks: np.ndarray
    holds: bool


def _require(report: SolveReport, *fields_needed: str):
    for name in fields_needed:
        if getattr(report, name) is None:
            raise MissingDiagnostics(f"report lacks {name}; rerun with it enabled")


def certify_bounds(
    report: SolveReport,
    problem: ConstrainedProblem,
    mirror_map: MirrorMap,
    mode: str,
    reference,
    eta: float,
    mu: Optional[float] = None,
    lipschitz: Optional[float] = None,
    slack_tol: float = 1e-8,
) -> CertificateResult:
    """Evaluate a convergence inequality at every prefix of a recorded run.

    Modes
    -----
    'md-averaged'
        Averaged-iterate bound for mirror descent under a declared
        1-strongly-convex map: f(mean u) - f* <= D(u*,u0)/(eta K)
        + (eta/2K) sum of squared dual norms of the constrained gradient.
    'vm-averaged'
        Same bound for the variable-metric family plus the Hessian-drift
        term weighted by the caller-supplied Lipschitz constant.
    'qn-averaged'
        Objective-divergence variant for the secant family; the report must
        carry the B-inverse quadratic forms.
    'contraction'
        Per-step linear rate D(u*, u_next) <= (1 - eta mu) D(u*, u) under
        the step-size admissibility test; a violated precondition fails the
        certificate rather than being masked.
    """
    reference = as_vector(reference, "reference")
    f_star = problem.objective(reference)
    _require(report, "iterates")
    iterates = report.iterates

    if mode in ("md-averaged", "vm-averaged"):
        _require(report, "grad_map_dual_sq")
        d0 = bregman_divergence(mirror_map, reference, iterates[0])
        n_steps = report.n_steps
        slacks = np.empty(n_steps)
        running = np.zeros_like(iterates[0])
        dual_sum = 0.0
        drift_sum = 0.0
        for k in range(n_steps):
            running += iterates[k]
            dual_sum += report.grad_map_dual_sq[k]
            big_k = k + 1
            lhs = problem.objective(running / big_k) - f_star
            rhs = d0 / (eta * big_k) + 0.5 * eta * dual_sum / big_k
            if mode == "vm-averaged":
                if lipschitz is None:
                    raise ValueError("vm-averaged needs a lipschitz estimate")
                du = iterates[k + 1] - iterates[k]
                drift_sum += (
                    float(du @ du) / eta**2
                    * float(np.linalg.norm(reference - iterates[k + 1]))
                )
                rhs += 0.5 * lipschitz * eta * drift_sum / big_k
            slacks[k] = rhs - lhs
        scale = max(1.0, abs(d0 / eta))
        return CertificateResult(mode, slacks, bool(np.all(slacks >= -slack_tol * scale)))

    if mode == "qn-averaged":
        _require(report, "qn_dual_sq")
        if lipschitz is None:
            raise ValueError("qn-averaged needs a lipschitz estimate")
        d0 = (
            f_star
            - problem.objective(iterates[0])
            - float(problem.gradient(iterates[0]) @ (reference - iterates[0]))
        )
        n_steps = report.n_steps
        slacks = np.empty(n_steps)
        running = np.zeros_like(iterates[0])
        tail = 0.0
        for k in range(n_steps):
            running += iterates[k]
            tail += report.qn_dual_sq[k] + lipschitz * report.grad_map_norms[k] * float(
                np.linalg.norm(reference - iterates[k + 1])
            )
            big_k = k + 1
            lhs = problem.objective(running / big_k) - f_star
            rhs = d0 / (eta * big_k) + eta * tail / big_k
            slacks[k] = rhs - lhs
        scale = max(1.0, abs(d0 / eta))
        return CertificateResult(mode, slacks, bool(np.all(slacks >= -slack_tol * scale)))

    if mode == "contraction":
        _require(report, "bregman_to_reference")
        if mu is None:
            raise ValueError("contraction mode needs mu")
        div = report.bregman_to_reference
        slacks = []
        for k in range(report.n_steps):
            if div[k] <= 1e-30 * max(div[0], 1e-30):
                break  # converged to the reference; nothing left to contract
            gap = report.objective_values[k] - f_star
            dual_sq = mirror_map.dual_norm_sq(problem.gradient(iterates[k]))
            if dual_sq is None:
                raise MissingDiagnostics("map declares no dual norm")
            admissible = 2.0 * gap / dual_sq if dual_sq > 0 else np.inf
            if eta > admissible:
                slacks.append(admissible - eta)  # precondition violated
                continue
            slacks.append((1.0 - eta * mu) * div[k] + 1e-10 - div[k + 1])
        slacks = np.asarray(slacks)
        return CertificateResult(mode, slacks, bool(np.all(slacks >= 0.0)))

    raise ValueError(f"unknown certification mode {mode!r}")


def check_exponential_decay(
    trajectory: FlowTrajectory, mu: float, tol_factor: float = 1e-3
) -> CertificateResult:
    """Check D(t) <= D(0) exp(-mu t) (1 + tol) along a flow trajectory."""
    if trajectory.bregman is None:
        raise MissingDiagnostics("trajectory carries no divergence series")
    d = trajectory.bregman
    bound = d[0] * np.exp(-mu * trajectory.times) * (1.0 + tol_factor)
    slacks = bound - d
    return CertificateResult("exp-decay", slacks, bool(np.all(slacks >= 0.0)))


def check_averaged_flow_bound(
    trajectory: FlowTrajectory,
    problem: ConstrainedProblem,
    mirror_map: MirrorMap,
    reference,
    horizons,
    tol_factor: float = 1e-6,
) -> CertificateResult:
    """Check f(time-average of u) - f* <= D(u*, u0)/T at the given horizons."""
    reference = as_vector(reference, "reference")
    d0 = bregman_divergence(mirror_map, reference, trajectory.states[0])
    f_star = problem.objective(reference)
    slacks = []
    for horizon in horizons:
        u_bar = trajectory.average_state(horizon)
        lhs = problem.objective(u_bar) - f_star
        rhs = d0 / horizon
        slacks.append(rhs + tol_factor * max(1.0, rhs) - lhs)
    slacks = np.asarray(slacks)
    return CertificateResult("averaged-flow", slacks, bool(np.all(slacks >= 0.0)))


def error_contraction_ratios(iterates, reference) -> np.ndarray:
    """||u_{k+1} - u*|| / ||u_k - u*|| for each recorded step."""
    reference = as_vector(reference, "reference")
    errs = np.array([np.linalg.norm(np.asarray(u) - reference) for u in iterates])
    with np.errstate(divide="ignore", invalid="ignore"):
        return errs[1:] / errs[:-1]
