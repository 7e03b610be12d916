"""Sparse LDL^T factorization for symmetric quasi-definite KKT matrices.

The symbolic analysis (fill-reducing ordering, elimination tree, column
counts) is computed once per sparsity pattern; numeric factorizations reuse
it. Pivots are 1x1 and taken in the fixed order, so the inertia of the matrix
is read directly off the signs of ``D``.
"""

from __future__ import annotations

import numba as nb
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    pass


@nb.njit(cache=True)
def _etree(n, Ap, Ai):
    work = np.zeros(n, dtype=np.int64)
    Lnz = np.zeros(n, dtype=np.int64)
    etree = -np.ones(n, dtype=np.int64)
    for j in range(n):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                return etree, Lnz, -1
            while work[i] != j:
                if etree[i] == -1:
                    etree[i] = j
                Lnz[i] += 1
                work[i] = j
                i = etree[i]
    return etree, Lnz, 0


@nb.njit(cache=True)
def _factor(n, Ap, Ai, Ax, Lp, etree, Li, Lx, D):
    """Numeric up-looking factorization. Returns the number of positive pivots,
    or -1 when a zero pivot is met."""
    y_vals = np.zeros(n)
    y_used = np.zeros(n, dtype=np.bool_)
    y_idx = np.zeros(n, dtype=np.int64)
    elim = np.zeros(n, dtype=np.int64)
    next_space = Lp[:n].copy()
    Dinv = np.zeros(n)
    positive = 0

    for k in range(n):
        D[k] = 0.0
        nnz_y = 0
        for p in range(Ap[k], Ap[k + 1]):
            bidx = Ai[p]
            if bidx == k:
                D[k] = Ax[p]
                continue
            y_vals[bidx] = Ax[p]
            nxt = bidx
            if not y_used[nxt]:
                y_used[nxt] = True
                elim[0] = nxt
                nnz_e = 1
                nxt = etree[bidx]
                while nxt != -1 and nxt < k:
                    if y_used[nxt]:
                        break
                    y_used[nxt] = True
                    elim[nnz_e] = nxt
                    nnz_e += 1
                    nxt = etree[nxt]
                while nnz_e > 0:
                    nnz_e -= 1
                    y_idx[nnz_y] = elim[nnz_e]
                    nnz_y += 1
        for i in range(nnz_y - 1, -1, -1):
            c = y_idx[i]
            tmp = next_space[c]
            yc = y_vals[c]
            for j in range(Lp[c], tmp):
                y_vals[Li[j]] -= Lx[j] * yc
            Li[tmp] = k
            Lx[tmp] = yc * Dinv[c]
            D[k] -= yc * Lx[tmp]
            next_space[c] += 1
            y_vals[c] = 0.0
            y_used[c] = False
        if D[k] == 0.0:
            return -1
        Dinv[k] = 1.0 / D[k]
        if D[k] > 0.0:
            positive += 1
    return positive


@nb.njit(cache=True)
def _solve(n, Lp, Li, Lx, D, x):
    for i in range(n):
        xi = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            x[Li[j]] -= Lx[j] * xi
    for i in range(n):
        x[i] /= D[i]
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            acc -= Lx[j] * x[Li[j]]
        x[i] = acc


def minimum_degree_ordering(rows: np.ndarray, cols: np.ndarray, n: int) -> np.ndarray:
    """Fill-reducing permutation for the symmetric pattern given by (rows, cols).

    SuperLU's multiple minimum degree on A^T + A is used for the ordering only;
    its numeric factors are discarded. Returns ``perm`` with ``perm[old] = new``.
    """
    r = np.concatenate([rows, cols, np.arange(n)])
    c = np.concatenate([cols, rows, np.arange(n)])
    v = np.concatenate([np.full(2 * len(rows), 1e-3), np.full(n, float(n))])
    M = sp.csc_matrix((v, (r, c)), shape=(n, n))
    lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    return np.asarray(lu.perm_c, dtype=np.int64)


class SymbolicLDL:
    """Ordering and elimination structure for a fixed symmetric pattern.

    ``rows``/``cols`` give the entries (duplicates allowed, either triangle) of
    an ``n x n`` symmetric matrix. ``factor(values)`` then refactors for new
    numeric values given in the same entry order.
    """

    def __init__(self, rows, cols, n: int, perm: np.ndarray | None = None):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        self.n = n
        if perm is None:
            off = rows != cols
            perm = minimum_degree_ordering(rows[off], cols[off], n)
        self.perm = perm
        self.iperm = np.empty(n, dtype=np.int64)
        self.iperm[perm] = np.arange(n)

        pr, pc = perm[rows], perm[cols]
        up_row = np.minimum(pr, pc)
        up_col = np.maximum(pr, pc)
        diag = np.arange(n, dtype=np.int64)
        key = np.concatenate([up_col * n + up_row, diag * n + diag])
        uniq, inv = np.unique(key, return_inverse=True)
        self._pos = inv[: len(rows)]
        self._nnz = len(uniq)
        self.Ai = (uniq % n).astype(np.int64)
        col_of = uniq // n
        self.Ap = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.Ap, col_of + 1, 1)
        self.Ap = np.cumsum(self.Ap)

        etree, Lnz, status = _etree(n, self.Ap, self.Ai)
        if status < 0:
            raise ValueError("pattern is not upper triangular after permutation")
        self.etree = etree
        self.Lp = np.zeros(n + 1, dtype=np.int64)
        self.Lp[1:] = np.cumsum(Lnz)
        self.Li = np.zeros(self.Lp[-1], dtype=np.int64)
        self.Lx = np.zeros(self.Lp[-1])
        self.D = np.zeros(n)
        self.Ax = np.zeros(self._nnz)
        self.positive = 0

    @property
    def fill(self) -> int:
        return int(self.Lp[-1])

    def assemble(self, values) -> np.ndarray:
        return np.bincount(self._pos, weights=values, minlength=self._nnz)

    def factor(self, values) -> tuple[int, int]:
        """Factor the matrix; returns (positive, negative) pivot counts."""
        self.Ax = self.assemble(np.asarray(values, dtype=float))
        pos = _factor(self.n, self.Ap, self.Ai, self.Ax, self.Lp, self.etree,
                      self.Li, self.Lx, self.D)
        if pos < 0 or not np.all(np.isfinite(self.D)):
            raise SingularMatrixError("zero pivot in LDL^T factorization")
        self.positive = pos
        return pos, self.n - pos

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = np.asarray(rhs, dtype=float)[self.iperm].copy()
        _solve(self.n, self.Lp, self.Li, self.Lx, self.D, x)
        return x[self.perm]

    def matrix(self, values=None) -> sp.csc_matrix:
        """Full symmetric matrix (original ordering) for the given values."""
        Ax = self.Ax if values is None else self.assemble(np.asarray(values, float))
        U = sp.csc_matrix((Ax, self.Ai, self.Ap), shape=(self.n, self.n))
        full = U + U.T - sp.diags(U.diagonal())
        return full[self.perm][:, self.perm].tocsc()
