import numpy as np

from ..nlp import NlpProblem
from .derivatives import DerivativeReport, FlaggedEntry, check_derivatives, random_interior_point
from .ipm import SolveResult, SolverOptions, project_interior, solve


def default_start(problem: NlpProblem, hints=None, frac: float = 1e-3) -> np.ndarray:
    """Start point from problem-supplied ``hints`` (zeros if absent), moved strictly
    inside every non-degenerate bound; fixed variables sit on their value."""
    x = np.zeros(problem.n) if hints is None else np.asarray(hints, dtype=float)
    return project_interior(problem, x, frac)


__all__ = ["DerivativeReport", "FlaggedEntry", "SolveResult", "SolverOptions",
           "check_derivatives", "default_start", "project_interior", "random_interior_point",
           "solve"]
