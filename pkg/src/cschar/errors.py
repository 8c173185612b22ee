"""Exception types for the toolkit.

Every failure mode named in an operation contract maps to one class here,
so callers can catch precisely.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class CutLocus(ToolkitError):
    """Principal matrix logarithm is ill-conditioned (near the antipode)."""


class ArityMismatch(ToolkitError):
    """Number of polynomial arguments does not match its degree."""


class GroupMismatch(ToolkitError):
    """Operands live in different matrix groups."""


class ChartMismatch(ToolkitError):
    """Operands live on different model charts."""


class KindMismatch(ToolkitError):
    """Scalar/algebra value kinds are incompatible with the operation."""


class DegreeMismatch(ToolkitError):
    """Form degree does not match the chain dimension."""


class DegreeOverflow(ToolkitError):
    """Exterior derivative of a top-degree form."""


class DimensionMismatch(ToolkitError):
    """Cycle dimension incompatible with the polynomial degree."""


class OpenLoop(ToolkitError):
    """Holonomy requested along a path that does not close up."""


class NonIntegerDefect(ToolkitError):
    """Gauge defect failed to round to an integer within tolerance."""


class NotFlat(ToolkitError):
    """A flatness precondition failed."""


class NotInvariant(ToolkitError):
    """A connection or form fails the sampled group-invariance check."""


class UnsupportedBundle(ToolkitError):
    """Requested toy bundle is not one of the built-ins."""


class PointMismatch(ToolkitError):
    """Tangent data attached to different base points."""


class NonLiftable(ToolkitError):
    """Loop cannot be lifted to the covering chart."""


class HypothesisViolated(ToolkitError):
    """Prequantum hypothesis (pulled-back curvature = d of potential) fails."""


class CornerTooClose(ToolkitError):
    """Parameter loop passes too close to a reducible corner point."""


class NoConvergence(ToolkitError):
    """Optimizer exhausted its iteration budget."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class ConfigInvalid(ToolkitError):
    """Experiment configuration failed validation."""
