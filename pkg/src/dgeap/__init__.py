"""Hindered-diffusion covariances from a DG heat solver, checked by random walks."""

from .errors import (
    DegenerateFieldError,
    DegenerateFitError,
    DgeapError,
    InstabilityError,
    NumericalError,
    PackingError,
    ParameterError,
    ParseError,
    SamplingError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateFieldError",
    "DegenerateFitError",
    "DgeapError",
    "InstabilityError",
    "NumericalError",
    "PackingError",
    "ParameterError",
    "ParseError",
    "SamplingError",
]
