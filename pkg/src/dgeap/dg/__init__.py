"""Discontinuous Galerkin discretization on the pixel triangulation."""

from .basis import Basis, make_basis
from .solver import (
    DGOperator,
    FieldState,
    SolverConfig,
    evaluate,
    interpolate,
    project_delta,
    solve,
    step,
)

__all__ = [
    "Basis",
    "DGOperator",
    "FieldState",
    "SolverConfig",
    "evaluate",
    "interpolate",
    "make_basis",
    "project_delta",
    "solve",
    "step",
]
