"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ThinspecError`, so callers (notably the CLI) can separate
numerical/ill-posed input failures from programming errors.
"""


class ThinspecError(Exception):
    """Base class for all package errors."""


class ExpressionSyntaxError(ThinspecError, ValueError):
    """Malformed expression text; ``position`` is the 0-based offset."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class EvalError(ThinspecError, ArithmeticError):
    pass


class NotDifferentiable(ThinspecError):
    pass


class DomainEmpty(ThinspecError):
    pass


class DomainUnbounded(ThinspecError):
    pass


class MeshTooLarge(ThinspecError):
    pass


class DegenerateLevelSet(ThinspecError):
    pass


class SolveFailure(ThinspecError):
    pass


class NotElliptic(ThinspecError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NoConvergence(ThinspecError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IncompatibleRHS(ThinspecError):
    pass


class StepTooLarge(ThinspecError):
    pass


class HypothesisViolation(ThinspecError):
    """Base for failures of the unique-interior-minimum hypothesis."""


class MinOnBoundary(HypothesisViolation):
    pass


class NoBracket(HypothesisViolation):
    pass


class NegativeCurvature(HypothesisViolation):
    pass


class NotPositive(ThinspecError):
    pass


class FormMismatch(ThinspecError):
    pass


class DomainTooSmall(ThinspecError):
    pass


class ConfigError(ThinspecError):
    pass


class MissingArtifact(ThinspecError):
    pass
