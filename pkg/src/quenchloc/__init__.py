"""Quench localization from second-sound data at spherical detectors.

Synthesizes wave data on a detector sphere, evaluates the Laplace-type
indicator functional, and reads the quench-detector distance off its
exponential decay rate.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    GeometryError,
    InconsistentSignError,
    NumericalError,
    QuenchLocError,
    ValidationError,
)

__all__ = [
    "__version__",
    "ConvergenceError",
    "GeometryError",
    "InconsistentSignError",
    "NumericalError",
    "QuenchLocError",
    "ValidationError",
]
