"""mdflow: Hessian-informed mirror descent and structure-preserving gradient flows.

The package couples a small constrained-optimization toolkit (mirror maps,
Bregman divergences, three iteration families with per-step feasibility)
with two minimizing-movement PDE solvers built on a mass-preserving
weighted Laplacian: a positive density flow and a bounded phase-field flow.
"""

from mdflow.cahn_hilliard import (
    CahnHilliardFlow,
    CHEnergy,
    ch_inner_step,
    ch_steady_state,
    ch_variable_metric_step,
    cosine_initial,
)
from mdflow.constrained import (
    ConstrainedProblem,
    entropy_linear_problem,
    quadratic_problem,
    solve_multiplier,
    strong_convexity_ratio,
)
from mdflow.grid import (
    Field,
    Grid1D,
    WeightedLaplacianOp,
    assemble_weighted_laplacian,
    integrate,
)
from mdflow.mirror_maps import (
    DoubleLogBarrierMap,
    EntropyMap,
    H1EntropyMap,
    MirrorMap,
    QuadraticMap,
    bregman_divergence,
)
from mdflow.solvers import (
    CertificateResult,
    FlowTrajectory,
    MirrorDescent,
    QuasiNewton,
    SolveReport,
    VariableMetric,
    certify_bounds,
    check_averaged_flow_bound,
    check_exponential_decay,
    error_contraction_ratios,
    integrate_flow,
    sufficient_descent_step,
)
from mdflow.wasserstein import (
    AggregationEnergy,
    PorousMediumEnergy,
    WassersteinFlow,
    aggregation_equilibrium,
    aggregation_kernel,
    barenblatt,
    gaussian_density,
    md_inner_step,
    newton_solve_logdensity,
    variable_metric_inner_step,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationEnergy",
    "CahnHilliardFlow",
    "CHEnergy",
    "CertificateResult",
    "ConstrainedProblem",
    "DoubleLogBarrierMap",
    "EntropyMap",
    "Field",
    "FlowTrajectory",
    "Grid1D",
    "H1EntropyMap",
    "MirrorDescent",
    "MirrorMap",
    "PorousMediumEnergy",
    "QuadraticMap",
    "QuasiNewton",
    "SolveReport",
    "VariableMetric",
    "WassersteinFlow",
    "WeightedLaplacianOp",
    "aggregation_equilibrium",
    "aggregation_kernel",
    "assemble_weighted_laplacian",
    "barenblatt",
    "bregman_divergence",
    "certify_bounds",
    "ch_inner_step",
    "ch_steady_state",
    "ch_variable_metric_step",
    "check_averaged_flow_bound",
    "check_exponential_decay",
    "cosine_initial",
    "entropy_linear_problem",
    "error_contraction_ratios",
    "gaussian_density",
    "integrate",
    "integrate_flow",
    "md_inner_step",
    "newton_solve_logdensity",
    "quadratic_problem",
    "solve_multiplier",
    "strong_convexity_ratio",
    "sufficient_descent_step",
    "variable_metric_inner_step",
]
