"""Convex surrogate subproblems for the time-allocation, trajectory and power blocks."""

from .builders import SubproblemError, build_p3, build_p5, build_p7, nominal_sizes
from .problem import ComposedFamily, ConvexSubproblem, LocalFamily
from .surrogates import (
    SurrogateCoefficients,
    inv_quad_transform_ub,
    quad_transform_lb,
    surrogate_coefficients,
    taylor_inv_quart_lb,
    taylor_inv_sq_lb,
    taylor_sq_lb,
)

__all__ = [
    "ComposedFamily", "ConvexSubproblem", "LocalFamily", "SubproblemError", "SurrogateCoefficients",
    "build_p3", "build_p5", "build_p7", "inv_quad_transform_ub", "nominal_sizes", "quad_transform_lb",
    "surrogate_coefficients", "taylor_inv_quart_lb", "taylor_inv_sq_lb", "taylor_sq_lb",
]
