"""Grid solver and diagnostics for the sign-switching elliptic equation

    F1(D^2u) 1{u>0} + F2(D^2u) 1{u<0} = 1

on uniform Cartesian grids, with closed-form oracles to check it against.
"""

__version__ = "0.1.0"

from .discretization import Grid, GridFunction, StencilSet  # noqa: E402
from .elliptic_ops import (  # noqa: E402
    Bellman,
    BellmanFamily,
    EllipticityBounds,
    Linear,
    PucciMinus,
    PucciPlus,
    evaluate,
    half_space_gamma,
    laplacian,
)
from .oracles import half_space_solution, quadratic_p2, radial_solution  # noqa: E402
from .solver import ProblemSpec, SolveResult, SolverConfig, solve  # noqa: E402

__all__ = [
    "Bellman",
    "BellmanFamily",
    "EllipticityBounds",
    "Grid",
    "GridFunction",
    "Linear",
    "ProblemSpec",
    "PucciMinus",
    "PucciPlus",
    "SolveResult",
    "SolverConfig",
    "StencilSet",
    "evaluate",
    "half_space_gamma",
    "half_space_solution",
    "laplacian",
    "quadratic_p2",
    "radial_solution",
    "solve",
]
