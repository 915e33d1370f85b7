"""Exception hierarchy for mdflow.

All library errors derive from :class:`MDFlowError` so callers can catch
everything from this package with a single ``except`` clause.
"""


class MDFlowError(Exception):
    """Base class for all mdflow errors."""


class DomainViolation(MDFlowError):
    """A point left the domain of a mirror map (e.g. log of a nonpositive value)."""


class MultiplierNotFound(MDFlowError):
    """The Lagrange-multiplier root-find did not converge within its budget."""


class DegenerateSample(MDFlowError):
    """A sample coincides with the reference point, so a divergence ratio is 0/0."""


class SingularMetric(MDFlowError):
    """The mirror-map Hessian (or secant matrix) could not be inverted."""


class LineSearchFailure(MDFlowError):
    """Backtracking exhausted its halving budget without sufficient descent."""


class NewtonDivergence(MDFlowError):
    """An inner Newton iteration exceeded its budget or stopped making progress."""


class LinearSolveFailure(MDFlowError):
    """A linear system inside an iteration could not be solved."""


class MissingDiagnostics(MDFlowError):
    """A solve report lacks the recorded quantities needed by a certification."""


class ShapeMismatch(MDFlowError):
    """Operands defined on incompatible grids or with incompatible lengths."""


class NegativeWeight(MDFlowError):
    """A weighted-Laplacian weight field has a negative entry."""


class RhsNotInRange(MDFlowError):
    """A right-hand side with nonzero sum was passed to the singular operator solve."""


class DisconnectedOperator(MDFlowError):
    """Zero edge weights split the operator and the right-hand side is inconsistent."""


class ConfigError(MDFlowError):
    """A run configuration failed to parse or validate."""
