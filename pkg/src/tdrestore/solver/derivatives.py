"""Central-difference verification of analytic derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nlp import NlpProblem

RTOL = 1e-5
ATOL = 1e-7


@dataclass
class FlaggedEntry:
    block: str
    row: str
    column: str
    analytic: float
    numeric: float
    error: float


@dataclass
class DerivativeReport:
    """Max relative error per block; ``flagged`` lists entries above tolerance.

    The error of an entry is ``|a - d| / max(|a|, |d|, ATOL / RTOL)``, so an entry
    is flagged exactly when ``|a - d| > max(RTOL * max(|a|, |d|), ATOL)``.
    """

    max_error: dict[str, float]
    flagged: list[FlaggedEntry] = field(default_factory=list)
    step: float = 1e-6

    @property
    def ok(self) -> bool:
        return not self.flagged

    @property
    def worst(self) -> float:
        return max(self.max_error.values(), default=0.0)

    def summary(self) -> str:
        lines = [f"{k:>15s}: {v:.3e}" for k, v in self.max_error.items()]
        for e in self.flagged[:20]:
            lines.append(f"  FLAG {e.block} [{e.row}, {e.column}] analytic={e.analytic:.9g} "
                         f"numeric={e.numeric:.9g} err={e.error:.2e}")
        if len(self.flagged) > 20:
            lines.append(f"  ... {len(self.flagged) - 20} more")
        return "\n".join(lines)


def _compare(block, A, D, row_names, col_names, flagged, limit):
    scale = np.maximum(np.maximum(np.abs(A), np.abs(D)), ATOL / RTOL)
    err = np.abs(A - D) / scale
    worst = float(err.max()) if err.size else 0.0
    bad = np.argwhere(err > RTOL)
    for r, c in bad[:limit]:
        flagged.append(FlaggedEntry(block, row_names[r], col_names[c], float(A[r, c]),
                                    float(D[r, c]), float(err[r, c])))
    return worst


def _finite(v, what):
    v = np.asarray(v)
    if v.dtype != np.longdouble:
        v = v.astype(float)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"non-finite {what} evaluation near the check point")
    return v


def _objective_difference(problem, x, j, step):
    """Central difference of the objective along ``j``; evaluated in extended
    precision when the callable preserves ``np.longdouble`` input."""
    xl = x.astype(np.longdouble)
    e = np.zeros(len(x), dtype=np.longdouble)
    e[j] = step
    fp, fm = problem.objective(xl + e), problem.objective(xl - e)
    if np.asarray(fp).dtype != np.longdouble:
        e = np.zeros(len(x))
        e[j] = step
        fp, fm = problem.objective(x + e), problem.objective(x - e)
    fp, fm = _finite(fp, "objective"), _finite(fm, "objective")
    return float((fp - fm) / (2 * np.asarray(step, dtype=fp.dtype)))


def check_derivatives(problem: NlpProblem, x, step: float = 1e-6, hessian: bool = True,
                      seed: int = 0, max_flags: int = 200) -> DerivativeReport:
    """Compare gradient, both Jacobian blocks and (optionally) the Lagrangian
    Hessian with central differences of the corresponding lower-order function.

    Every entry of the dense derivative is compared, so structurally missing
    pattern entries are caught too. Objectives that accept ``np.longdouble``
    input are differenced in extended precision, which keeps rounding noise
    below the tolerance when the objective value is large. The Hessian is checked for seeded random
    multipliers.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    lo, hi = problem.lower, problem.upper
    movable = lo < hi
    if np.any((x[movable] <= lo[movable]) | (x[movable] >= hi[movable])):
        raise ValueError("check point must lie strictly inside the bounds")
    n = problem.n
    names = problem.var_names or [f"x{i}" for i in range(n)]
    eq_names = problem.eq_names or [f"eq{i}" for i in range(problem.m_eq)]
    in_names = problem.ineq_names or [f"ineq{i}" for i in range(problem.m_ineq)]
    rng = np.random.default_rng(seed)
    lam_e = rng.standard_normal(problem.m_eq)
    lam_i = rng.standard_normal(problem.m_ineq)

    def lag_grad(v):
        g = np.asarray(problem.gradient(v), float).copy()
        if problem.m_eq:
            g += problem.eq_jacobian(v).T @ lam_e
        if problem.m_ineq:
            g += problem.ineq_jacobian(v).T @ lam_i
        return g

    g = _finite(problem.gradient(x), "gradient")[None, :]
    Je = problem.eq_jacobian(x).toarray()
    Ji = problem.ineq_jacobian(x).toarray()
    dg = np.zeros((1, n))
    dJe = np.zeros((problem.m_eq, n))
    dJi = np.zeros((problem.m_ineq, n))
    H = problem.hessian(x, 1.0, lam_e, lam_i).toarray() if hessian else None
    dH = np.zeros((n, n)) if hessian else None
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        xp, xm = x + e, x - e
        dg[0, j] = _objective_difference(problem, x, j, step)
        if problem.m_eq:
            dJe[:, j] = (_finite(problem.eq(xp), "constraint")
                         - _finite(problem.eq(xm), "constraint")) / (2 * step)
        if problem.m_ineq:
            dJi[:, j] = (_finite(problem.ineq(xp), "constraint")
                         - _finite(problem.ineq(xm), "constraint")) / (2 * step)
        if hessian:
            dH[:, j] = (lag_grad(xp) - lag_grad(xm)) / (2 * step)

    flagged: list[FlaggedEntry] = []
    report = {
        "gradient": _compare("gradient", g, dg, ["objective"], names, flagged, max_flags),
        "eq_jacobian": _compare("eq_jacobian", Je, dJe, eq_names, names, flagged, max_flags),
        "ineq_jacobian": _compare("ineq_jacobian", Ji, dJi, in_names, names, flagged, max_flags),
    }
    if hessian:
        report["hessian"] = _compare("hessian", H, dH, names, names, flagged, max_flags)
    return DerivativeReport(report, flagged, step)


def random_interior_point(problem: NlpProblem, rng: np.random.Generator, center=None,
                          margin: float = 0.05, spread: float = 0.1) -> np.ndarray:
    """Uniform draw inside finite bounds (kept ``margin`` of the range away from
    them); unbounded coordinates are ``center`` plus Gaussian noise."""
    lo, hi = problem.lower, problem.upper
    center = np.zeros(problem.n) if center is None else np.asarray(center, float)
    x = center + spread * rng.standard_normal(problem.n)
    both = np.isfinite(lo) & np.isfinite(hi) & (lo < hi)
    w = hi[both] - lo[both]
    x[both] = lo[both] + w * (margin + (1 - 2 * margin) * rng.random(both.sum()))
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    x[only_lo] = lo[only_lo] + margin + np.abs(x[only_lo] - lo[only_lo])
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x[only_hi] = hi[only_hi] - margin - np.abs(hi[only_hi] - x[only_hi])
    fixed = lo == hi
    x[fixed] = lo[fixed]
    return x
