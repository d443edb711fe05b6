"""Norm bounds, stability and trapping-region estimates for x' = A(t) x + f(t, x) + F(t)."""

from .errors import (BlowUpError, BracketError, ConfigError, DegeneracyError, DimensionError,
                     EvaluationError, IntegrationError, NormBoundsError, UnsupportedError,
                     ValidationError)

__version__ = "0.1.0"
