"""Independent recomputation of the solver's reported optimality error.

Works only from the unscaled multipliers, slacks and scaling factors stored in
a :class:`~tdrestore.solver.SolveResult`, plus the problem callbacks.
"""

from __future__ import annotations

import numpy as np

from ..nlp import NlpProblem

SCALE_MAX = 100.0


def _maxabs(v) -> float:
    v = np.asarray(v, float)
    return float(np.abs(v).max()) if v.size else 0.0


def kkt_parts(problem: NlpProblem, result) -> dict:
    """Dual, primal and complementarity parts of the scaled error at mu = 0."""
    x = np.asarray(result.x, float)
    s = np.asarray(result.slacks if result.slacks is not None else np.zeros(problem.m_ineq), float)
    o = float(result.scaling["objective"])
    de = np.asarray(result.scaling["eq"], float)
    di = np.asarray(result.scaling["ineq"], float)
    mu = result.multipliers
    ye, yi = np.asarray(mu["eq"], float), np.asarray(mu["ineq"], float)
    zl = np.concatenate([mu["lower"], mu["ineq_lower"]])
    zu = np.concatenate([mu["upper"], mu["ineq_upper"]])

    lo = np.concatenate([problem.lower, problem.ineq_lower])
    hi = np.concatenate([problem.upper, problem.ineq_upper])
    free = lo < hi
    has_lo = np.isfinite(lo) & free
    has_hi = np.isfinite(hi) & free

    # stationarity of the Lagrangian in (x, s), in unscaled multipliers
    gx = np.asarray(problem.gradient(x), float).copy()
    if problem.m_eq:
        gx += problem.eq_jacobian(x).T @ ye
    if problem.m_ineq:
        gx += problem.ineq_jacobian(x).T @ yi
    gs = -yi
    grad_l = o * (np.concatenate([gx, gs]) - zl + zu)
    dual = _maxabs(grad_l[free])

    primal = max(_maxabs(de * problem.eq(x)), _maxabs(di * (problem.ineq(x) - s)))

    z = np.concatenate([x, s])
    comp = max(_maxabs(o * (z[has_lo] - lo[has_lo]) * zl[has_lo]),
               _maxabs(o * (hi[has_hi] - z[has_hi]) * zu[has_hi]))

    with np.errstate(divide="ignore", invalid="ignore"):
        y_scaled = np.concatenate([np.where(de != 0, ye * o / de, 0.0),
                                   np.where(di != 0, yi * o / di, 0.0)])
    nb = int(has_lo.sum() + has_hi.sum())
    m = problem.m_eq + problem.m_ineq
    zsum = o * (np.abs(zl).sum() + np.abs(zu).sum())
    s_d = max(SCALE_MAX, (np.abs(y_scaled).sum() + zsum) / max(m + nb, 1)) / SCALE_MAX
    s_c = max(SCALE_MAX, zsum / max(nb, 1)) / SCALE_MAX
    return {"dual": dual / s_d, "primal": primal, "complementarity": comp / s_c}


def recompute_kkt(problem: NlpProblem, result) -> float:
    """Scaled optimality error ``max(dual / s_d, primal, compl / s_c)`` of ``result``."""
    return max(kkt_parts(problem, result).values())
