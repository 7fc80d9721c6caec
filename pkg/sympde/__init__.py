"""
Symmetric PDE solver

Deep backward dynamic programming for PDEs in the positions of N exchangeable
particles, with DeepSet-type networks for the value and its particle gradient.
"""

from .errors import (
    ConfigError,
    DomainError,
    NumericError,
    StructuralError,
    SymPdeError,
    UnsupportedError,
    UsageError,
)
from .problems import ProblemSpec, make_problem, problem_names
from .schemas import ExperimentConfig, NetConfig, SolveConfig
from .solver import (
    RunReport,
    StepSolution,
    policy_forward_induction,
    solve_fullynonlinear,
    solve_semilinear,
    solve_with_exploration,
)

__version__ = "0.1.0"
__all__ = [
    "ConfigError",
    "DomainError",
    "NumericError",
    "StructuralError",
    "SymPdeError",
    "UnsupportedError",
    "UsageError",
    "ProblemSpec",
    "make_problem",
    "problem_names",
    "ExperimentConfig",
    "NetConfig",
    "SolveConfig",
    "RunReport",
    "StepSolution",
    "policy_forward_induction",
    "solve_fullynonlinear",
    "solve_semilinear",
    "solve_with_exploration",
]
