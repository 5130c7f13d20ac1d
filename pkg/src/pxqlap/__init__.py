"""Solver and verification harness for singular (p(x), q(x))-Laplacian systems."""
from .expr import ExprField, parse
from .grid import Domain, Field, Grid, build_grid, boundary_strip, integrate
from .plap import BoundCertificate, PlapProblem, SolverConfig, SolveReport, Source, solve_dirichlet
from .brackets import Bracket, competitive_bracket, cooperative_bracket, tune_lambda
from .system import ProblemSpec, StructureError, check_structure, fixed_point_solve

__version__ = "0.1.0"

__all__ = [
    "ExprField", "parse", "Domain", "Field", "Grid", "build_grid", "boundary_strip", "integrate",
    "BoundCertificate", "PlapProblem", "SolverConfig", "SolveReport", "Source", "solve_dirichlet",
    "Bracket", "competitive_bracket", "cooperative_bracket", "tune_lambda",
    "ProblemSpec", "StructureError", "check_structure", "fixed_point_solve",
]
