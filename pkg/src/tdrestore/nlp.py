"""Generic sparse nonlinear program.

    min f(x)  s.t.  c_eq(x) = 0,  ineq_lower <= c_ineq(x) <= ineq_upper,
                    lower <= x <= upper

Jacobians and the Lagrangian Hessian are returned as value arrays aligned with
fixed coordinate structures, so callers can reuse sparsity analysis.
The Hessian structure holds the lower triangle (row >= col) of
``obj_factor * grad^2 f + sum(lam_eq * grad^2 c_eq) + sum(lam_ineq * grad^2 c_ineq)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp


class SparsePattern:
    """Fixed coordinate pattern that sums duplicate entries.

    ``raw_rows``/``raw_cols`` may contain duplicates; ``reduce`` maps values in
    that raw order onto the unique ``rows``/``cols``.
    """

    def __init__(self, raw_rows, raw_cols, shape):
        raw_rows = np.asarray(raw_rows, dtype=np.int64)
        raw_cols = np.asarray(raw_cols, dtype=np.int64)
        self.shape = shape
        key = raw_rows * max(shape[1], 1) + raw_cols
        uniq, self._inv = np.unique(key, return_inverse=True)
        ncols = max(shape[1], 1)
        self.rows = (uniq // ncols).astype(np.int64)
        self.cols = (uniq % ncols).astype(np.int64)
        self.nnz = len(uniq)

    def reduce(self, raw_values) -> np.ndarray:
        return np.bincount(self._inv, weights=raw_values, minlength=self.nnz)

    def matrix(self, values) -> sp.csr_matrix:
        return sp.csr_matrix((values, (self.rows, self.cols)), shape=self.shape)


@dataclass
class NlpProblem:
    n: int
    lower: np.ndarray
    upper: np.ndarray
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eq: Callable[[np.ndarray], np.ndarray]
    eq_jac_rows: np.ndarray
    eq_jac_cols: np.ndarray
    eq_jac_values: Callable[[np.ndarray], np.ndarray]
    ineq: Callable[[np.ndarray], np.ndarray]
    ineq_lower: np.ndarray
    ineq_upper: np.ndarray
    ineq_jac_rows: np.ndarray
    ineq_jac_cols: np.ndarray
    ineq_jac_values: Callable[[np.ndarray], np.ndarray]
    hess_rows: np.ndarray
    hess_cols: np.ndarray
    hess_values: Callable[[np.ndarray, float, np.ndarray, np.ndarray], np.ndarray]
    var_names: list[str] = field(default_factory=list)
    eq_names: list[str] = field(default_factory=list)
    ineq_names: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def m_eq(self) -> int:
        return len(self.eq_names)

    @property
    def m_ineq(self) -> int:
        return len(self.ineq_lower)

    def counts(self) -> dict:
        return {"n": self.n, "eq": self.m_eq, "ineq": self.m_ineq,
                "jac_nnz": len(self.eq_jac_rows) + len(self.ineq_jac_rows),
                "hess_nnz": len(self.hess_rows)}

    def eq_jacobian(self, x) -> sp.csr_matrix:
        return sp.csr_matrix((self.eq_jac_values(x), (self.eq_jac_rows, self.eq_jac_cols)),
                             shape=(self.m_eq, self.n))

    def ineq_jacobian(self, x) -> sp.csr_matrix:
        return sp.csr_matrix((self.ineq_jac_values(x), (self.ineq_jac_rows, self.ineq_jac_cols)),
                             shape=(self.m_ineq, self.n))

    def hessian(self, x, obj_factor, lam_eq, lam_ineq) -> sp.csr_matrix:
        """Full symmetric Lagrangian Hessian."""
        vals = self.hess_values(x, obj_factor, lam_eq, lam_ineq)
        low = sp.csr_matrix((vals, (self.hess_rows, self.hess_cols)), shape=(self.n, self.n))
        return (low + low.T - sp.diags(low.diagonal())).tocsr()


def dense_problem(n, f, grad, hess, lower=None, upper=None, eq=None, eq_jac=None, eq_hess=None,
                  m_eq=0, ineq=None, ineq_jac=None, ineq_hess=None, ineq_lower=(),
                  ineq_upper=()) -> NlpProblem:
    """Wrap small dense callables as an :class:`NlpProblem` (full dense patterns).

    ``eq_hess``/``ineq_hess`` take ``(x, lam)`` and return the weighted sum of
    constraint Hessians as an ``n x n`` array.
    """
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    m_in = len(ineq_lower)
    er, ec = np.divmod(np.arange(m_eq * n), n)
    ir, ic = np.divmod(np.arange(m_in * n), n)
    hr, hc = np.tril_indices(n)

    def hess_values(x, sigma, le, li):
        H = sigma * np.asarray(hess(x), float)
        if m_eq:
            H = H + eq_hess(x, le)
        if m_in:
            H = H + ineq_hess(x, li)
        return H[hr, hc]

    return NlpProblem(
        n=n, lower=lower, upper=upper, objective=f, gradient=grad,
        eq=(lambda x: np.asarray(eq(x), float)) if m_eq else (lambda x: np.zeros(0)),
        eq_jac_rows=er, eq_jac_cols=ec,
        eq_jac_values=(lambda x: np.asarray(eq_jac(x), float).ravel()) if m_eq
        else (lambda x: np.zeros(0)),
        ineq=(lambda x: np.asarray(ineq(x), float)) if m_in else (lambda x: np.zeros(0)),
        ineq_lower=np.asarray(ineq_lower, float), ineq_upper=np.asarray(ineq_upper, float),
        ineq_jac_rows=ir, ineq_jac_cols=ic,
        ineq_jac_values=(lambda x: np.asarray(ineq_jac(x), float).ravel()) if m_in
        else (lambda x: np.zeros(0)),
        hess_rows=hr, hess_cols=hc, hess_values=hess_values,
        var_names=[f"x{i}" for i in range(n)],
        eq_names=[f"eq{i}" for i in range(m_eq)],
        ineq_names=[f"ineq{i}" for i in range(m_in)])
