"""Exception hierarchy shared by all modules."""


class NormBoundsError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(NormBoundsError):
    """Schema violation in a configuration document."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class ValidationError(NormBoundsError):
    """Structurally well-formed input that violates a model invariant."""


class DimensionError(ValidationError):
    pass


class UnsupportedError(NormBoundsError):
    pass


class IntegrationError(NormBoundsError):
    """Numerical failure inside the integrator.

    ``t`` is the last time the solution was successfully advanced to.
    """

    def __init__(self, message, t):
        self.t = t
        super().__init__(f"{message} (t = {t:.9g})")


class BlowUpError(IntegrationError):
    """Step-size underflow or escape-radius exceedance."""


class EvaluationError(IntegrationError):
    """Right-hand side returned a non-finite value."""


class DegeneracyError(NormBoundsError):
    """Singular or non-positive quantity where a regular one is required."""


class BracketError(NormBoundsError):
    """A search bracket does not straddle the criterion boundary."""
