"""Primal-dual interior-point method for :class:`~tdrestore.nlp.NlpProblem`.

Inequality rows get slacks ``s`` so the working problem is

    min f(x)  s.t.  C(x, s) = [c_eq(x); c_ineq(x) - s] = 0,  bounds on (x, s).

Each iteration solves the symmetric KKT system

    [ W + Sigma + dw I    A^T   ] [dz]     [ grad phi_mu + A^T y ]
    [ A                  -dc I  ] [dy] = - [ C                    ]

with a sparse LDL^T factorization over a fixed pattern. ``dw`` is raised until
the inertia is (n_free, m), ``dc`` is a tiny static term that keeps the matrix
quasi-definite and is removed again by iterative refinement. Steps are
globalized by backtracking on an l1 merit function with one second-order
correction. The barrier parameter follows the monotone Fiacco-McCormick rule.

Objective and constraint rows are gradient-scaled at the start point; the
reported ``kkt_residual`` is the scaled optimality error at mu = 0 and can be
recomputed from a :class:`SolveResult` with :func:`kkt_error`.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..nlp import NlpProblem
from .ldl import SingularMatrixError, SymbolicLDL

log = logging.getLogger(__name__)

_SCALE_MAX = 100.0       # dual/complementarity error normalization
_GRAD_TARGET = 100.0     # target max gradient entry after scaling
_KAPPA_SIGMA = 1e10
_ARMIJO = 1e-4
_RHO = 0.1
_DW_FIRST = 1e-4
_DW_MAX = 1e20
_MAX_BACKTRACK = 40
_MAX_STALLS = 8


@dataclass(frozen=True)
class SolverOptions:
    kkt_tolerance: float = 1e-6
    max_iterations: int = 500
    initial_barrier: float = 0.1
    step_fraction: float = 0.995
    regularization_floor: float = 1e-8
    seed: int = 0
    constraint_tolerance: float = 1e-8   # unscaled inf-norm of constraint violation
    bound_push: float = 1e-3             # inward projection, fraction of each range
    start_perturbation: float = 0.0      # seeded relative perturbation of x0
    refinement_steps: int = 3

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if not self.initial_barrier > 0:
            raise ValueError("initial_barrier must be positive")
        if not self.regularization_floor > 0:
            raise ValueError("regularization_floor must be positive")
        if not 0 < self.bound_push < 0.5:
            raise ValueError("bound_push must lie in (0, 0.5)")


@dataclass
class SolveResult:
    """Outcome of :func:`solve`.

    ``multipliers`` are duals of the original (unscaled) problem: ``eq`` and
    ``ineq`` for the constraint rows, ``lower``/``upper`` for variable bounds and
    ``ineq_lower``/``ineq_upper`` for the row bounds. ``scaling`` holds the
    objective and row factors used internally.
    """

    status: str
    x: np.ndarray
    multipliers: dict
    kkt_residual: float
    iterations: int
    objective: float
    slacks: np.ndarray = field(repr=False, default=None)
    scaling: dict = field(repr=False, default_factory=dict)
    constraint_violation: float = np.inf
    barrier: float = np.nan
    iterate_hashes: list[str] = field(repr=False, default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _push_interior(v, lo, hi, frac):
    """Move ``v`` strictly inside [lo, hi] by ``frac`` of the range (or of max(1, |bound|)
    for one-sided bounds). Entries with lo == hi are set to the bound."""
    v = np.array(v, dtype=float)
    fixed = lo == hi
    both = np.isfinite(lo) & np.isfinite(hi) & ~fixed
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    p = frac * (hi[both] - lo[both])
    v[both] = np.clip(v[both], lo[both] + p, hi[both] - p)
    v[only_lo] = np.maximum(v[only_lo], lo[only_lo] + frac * np.maximum(1.0, np.abs(lo[only_lo])))
    v[only_hi] = np.minimum(v[only_hi], hi[only_hi] - frac * np.maximum(1.0, np.abs(hi[only_hi])))
    v[fixed] = lo[fixed]
    return v


def project_interior(problem: NlpProblem, x, frac: float = 1e-3) -> np.ndarray:
    return _push_interior(x, problem.lower, problem.upper, frac)


def _row_scale(rows, vals, m):
    if m == 0:
        return np.ones(0)
    mx = np.zeros(m)
    np.maximum.at(mx, rows, np.abs(vals))
    return np.where(mx > _GRAD_TARGET, _GRAD_TARGET / np.maximum(mx, 1e-300), 1.0)


class _Scaled:
    """The slack-augmented, scaled view of an NlpProblem over z = (x, s)."""

    def __init__(self, problem: NlpProblem, obj_scale, eq_scale, ineq_scale):
        self.p = problem
        self.n, self.me, self.mi = problem.n, problem.m_eq, problem.m_ineq
        self.N = self.n + self.mi
        self.m = self.me + self.mi
        self.obj_scale = obj_scale
        self.de, self.di = eq_scale, ineq_scale
        self.lo = np.concatenate([problem.lower, problem.ineq_lower])
        self.hi = np.concatenate([problem.upper, problem.ineq_upper])
        k = np.arange(self.mi)
        self.jrows = np.concatenate([problem.eq_jac_rows, problem.ineq_jac_rows + self.me,
                                     self.me + k])
        self.jcols = np.concatenate([problem.eq_jac_cols, problem.ineq_jac_cols, self.n + k])

    def split(self, z):
        return z[: self.n], z[self.n:]

    def f(self, z):
        return self.obj_scale * float(self.p.objective(z[: self.n]))

    def grad(self, z):
        g = np.zeros(self.N)
        g[: self.n] = self.obj_scale * self.p.gradient(z[: self.n])
        return g

    def cons(self, z):
        x, s = self.split(z)
        return np.concatenate([self.de * self.p.eq(x), self.di * (self.p.ineq(x) - s)])

    def raw_violation(self, z):
        x, s = self.split(z)
        parts = [np.abs(self.p.eq(x)), np.abs(self.p.ineq(x) - s)]
        return max((float(a.max()) for a in parts if len(a)), default=0.0)

    def jac_values(self, z):
        x = z[: self.n]
        return np.concatenate([self.de[self.p.eq_jac_rows] * self.p.eq_jac_values(x),
                               self.di[self.p.ineq_jac_rows] * self.p.ineq_jac_values(x),
                               -self.di])

    def hess_values(self, z, y):
        return self.p.hess_values(z[: self.n], self.obj_scale, self.de * y[: self.me],
                                  self.di * y[self.me:])


def _masks(lo, hi, free):
    return np.isfinite(lo) & free, np.isfinite(hi) & free


def kkt_error(sc: _Scaled, z, y, zl, zu, free, mu=0.0, A=None):
    """Scaled optimality error ``max(dual / s_d, primal, compl / s_c)`` and its parts."""
    lm, um = _masks(sc.lo, sc.hi, free)
    if A is None:
        A = sp.csr_matrix((sc.jac_values(z), (sc.jrows, sc.jcols)), shape=(sc.m, sc.N))
    gl = sc.grad(z) + A.T @ y - zl + zu
    dual = float(np.abs(gl[free]).max()) if free.any() else 0.0
    c = sc.cons(z)
    primal = float(np.abs(c).max()) if len(c) else 0.0
    cl = (z[lm] - sc.lo[lm]) * zl[lm] - mu
    cu = (sc.hi[um] - z[um]) * zu[um] - mu
    comp = max(float(np.abs(cl).max()) if len(cl) else 0.0,
               float(np.abs(cu).max()) if len(cu) else 0.0)
    nb = lm.sum() + um.sum()
    zsum = np.abs(zl).sum() + np.abs(zu).sum()
    s_d = max(_SCALE_MAX, (np.abs(y).sum() + zsum) / max(sc.m + nb, 1)) / _SCALE_MAX
    s_c = max(_SCALE_MAX, zsum / max(nb, 1)) / _SCALE_MAX
    err = max(dual / s_d, primal, comp / s_c)
    return err, {"dual": dual / s_d, "primal": primal, "complementarity": comp / s_c}


class _Kkt:
    """Fixed-pattern KKT matrix over free primal entries and all constraint rows."""

    def __init__(self, sc: _Scaled, free, floor):
        self.sc = sc
        self.free = free
        self.F = np.flatnonzero(free)
        self.nf = len(self.F)
        self.dim = self.nf + sc.m
        self.floor = floor
        fpos = np.full(sc.N, -1, dtype=np.int64)
        fpos[self.F] = np.arange(self.nf)
        self.fpos = fpos
        p = sc.p
        hr, hc = fpos[p.hess_rows], fpos[p.hess_cols]
        self.hkeep = (hr >= 0) & (hc >= 0)
        jc = fpos[sc.jcols]
        self.jkeep = jc >= 0
        diag = np.arange(self.nf)
        cdiag = self.nf + np.arange(sc.m)
        self.rows = np.concatenate([hr[self.hkeep], diag, sc.jrows[self.jkeep] + self.nf, cdiag])
        self.cols = np.concatenate([hc[self.hkeep], diag, jc[self.jkeep], cdiag])
        self.sym = SymbolicLDL(self.rows, self.cols, self.dim)
        self.nh = int(self.hkeep.sum())
        self.nj = int(self.jkeep.sum())

    def values(self, hvals, diag, jvals, dc):
        return np.concatenate([hvals[self.hkeep], diag, jvals[self.jkeep],
                               np.full(self.sc.m, -dc)])


@dataclass
class _Trace:
    hashes: list = field(default_factory=list)

    def record(self, *arrays):
        h = hashlib.sha256()
        for a in arrays:
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        self.hashes.append(h.hexdigest())


def _ftb(v, dv, tau):
    """Largest alpha in (0, 1] with v + alpha dv >= (1 - tau) v for v > 0."""
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def solve(problem: NlpProblem, x0, opts: SolverOptions | None = None) -> SolveResult:
    """Minimize ``problem`` from ``x0``; see the module docstring for the method."""
    opts = opts or SolverOptions()
    n = problem.n
    x = np.array(x0, dtype=float).reshape(n)
    if opts.start_perturbation:
        rng = np.random.default_rng(opts.seed)
        x = x + opts.start_perturbation * np.maximum(1.0, np.abs(x)) * rng.standard_normal(n)
    if np.any(problem.lower > problem.upper):
        raise ValueError("variable lower bound exceeds upper bound")
    if np.any(problem.ineq_lower > problem.ineq_upper):
        raise ValueError("constraint lower bound exceeds upper bound")
    x = project_interior(problem, x, opts.bound_push)

    vals = [problem.objective(x), problem.gradient(x), problem.eq(x), problem.ineq(x),
            problem.eq_jac_values(x), problem.ineq_jac_values(x)]
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise ValueError("non-finite function value at the start point")
    g0 = np.abs(vals[1]).max() if n else 0.0
    obj_scale = min(1.0, _GRAD_TARGET / g0) if g0 > 0 else 1.0
    de = _row_scale(problem.eq_jac_rows, vals[4], problem.m_eq)
    di = _row_scale(problem.ineq_jac_rows, vals[5], problem.m_ineq)
    sc = _Scaled(problem, obj_scale, de, di)

    s = _push_interior(vals[3], problem.ineq_lower, problem.ineq_upper, opts.bound_push)
    z = np.concatenate([x, s])
    free = sc.lo < sc.hi
    lm, um = _masks(sc.lo, sc.hi, free)
    zl = np.where(lm, 1.0, 0.0)
    zu = np.where(um, 1.0, 0.0)
    kkt = _Kkt(sc, free, opts.regularization_floor)
    F, nf, m = kkt.F, kkt.nf, sc.m
    dc = opts.regularization_floor

    def jac(zz):
        jv = sc.jac_values(zz)
        return jv, sp.csr_matrix((jv, (sc.jrows, sc.jcols)), shape=(m, sc.N))

    jv, A = jac(z)
    y = np.zeros(m)
    if m:
        # least-squares multipliers from [I A^T; A 0]
        kv = kkt.values(np.zeros(len(problem.hess_rows)), np.ones(nf), jv, dc)
        try:
            kkt.sym.factor(kv)
            rhs = np.concatenate([-(sc.grad(z) - zl + zu)[F], np.zeros(m)])
            y = kkt.sym.solve(rhs)[nf:]
            if not np.all(np.isfinite(y)) or np.abs(y).max() > 1e3:
                y = np.zeros(m)
        except SingularMatrixError:
            y = np.zeros(m)

    mu = opts.initial_barrier
    mu_min = opts.kkt_tolerance / 10
    tau = max(opts.step_fraction, 1 - mu)
    nu = 1.0
    dw_last = 0.0
    trace = _Trace()
    trace.record(z, y, zl, zu)
    status, message = "iteration_limit", ""
    stalls = 0
    it = 0

    def barrier_terms(zz):
        dl = zz[lm] - sc.lo[lm]
        du = sc.hi[um] - zz[um]
        return dl, du

    def merit(zz, mu, nu):
        dl, du = barrier_terms(zz)
        if np.any(dl <= 0) or np.any(du <= 0):
            return np.inf
        c = sc.cons(zz)
        val = sc.f(zz) - mu * (np.log(dl).sum() + np.log(du).sum()) + nu * np.abs(c).sum()
        return val if np.isfinite(val) else np.inf

    def barrier_grad(zz, mu):
        g = sc.grad(zz)
        dl, du = barrier_terms(zz)
        g[lm] -= mu / dl
        g[um] += mu / du
        return g

    while True:
        err0, _ = kkt_error(sc, z, y, zl, zu, free, 0.0, A)
        viol = sc.raw_violation(z)
        if err0 <= opts.kkt_tolerance and viol <= opts.constraint_tolerance:
            status = "converged"
            break
        if it >= opts.max_iterations:
            status, message = "iteration_limit", f"stopped after {it} iterations"
            break
        while mu > mu_min:
            err_mu, _ = kkt_error(sc, z, y, zl, zu, free, mu, A)
            if err_mu > mu:
                break
            mu = max(mu_min, mu / 10)
            tau = max(opts.step_fraction, 1 - mu)

        dl, du = barrier_terms(z)
        sig = np.zeros(sc.N)
        sig[lm] += zl[lm] / dl
        sig[um] += zu[um] / du
        hv = sc.hess_values(z, y)
        gphi = barrier_grad(z, mu)
        rhs = -np.concatenate([(gphi + A.T @ y)[F], sc.cons(z)])

        # inertia correction
        dw = 0.0
        while True:
            kv = kkt.values(hv, sig[F] + dw, jv, dc)
            try:
                pos, neg = kkt.sym.factor(kv)
                ok = pos == nf and neg == m
            except SingularMatrixError:
                ok = False
            if ok:
                if dw > 0:
                    dw_last = dw
                break
            if dw == 0.0:
                dw = _DW_FIRST if dw_last == 0 else max(opts.regularization_floor, dw_last / 3)
            else:
                dw *= 100 if dw_last == 0 else 8
            if dw > _DW_MAX:
                break
        if dw > _DW_MAX:
            status, message = "infeasible_detected", "KKT system singular after maximal regularization"
            break

        K0 = kkt.sym.matrix(kkt.values(hv, sig[F] + dw, jv, 0.0))

        def ksolve(b):
            v = kkt.sym.solve(b)
            r = b - K0 @ v
            rn = np.abs(r).max()
            for _ in range(opts.refinement_steps):
                if rn <= 1e-14 * (1 + np.abs(b).max()):
                    break
                v2 = v + kkt.sym.solve(r)
                r2 = b - K0 @ v2
                rn2 = np.abs(r2).max()
                if not rn2 < rn:
                    break
                v, r, rn = v2, r2, rn2
            return v

        sol = ksolve(rhs)
        if log.isEnabledFor(logging.DEBUG):
            res = np.abs(K0 @ sol - rhs).max() / (1 + np.abs(rhs).max())
            _, parts = kkt_error(sc, z, y, zl, zu, free, mu, A)
            gl = sc.grad(z) + A.T @ y - zl + zu
            gl[~free] = 0
            w = np.argsort(-np.abs(gl))[:3]
            nm = [problem.var_names[i] if i < n else f"s{i - n}" for i in w]
            log.debug("   kkt res %.1e parts %s worst %s %s |y| %.1e", res,
                      {k: f"{v:.1e}" for k, v in parts.items()}, nm, gl[w], np.abs(y).max())
        dz = np.zeros(sc.N)
        dz[F] = sol[:nf]
        dy = sol[nf:]

        def bound_dual_steps(dz):
            dzl = np.zeros(sc.N)
            dzu = np.zeros(sc.N)
            dzl[lm] = mu / dl - zl[lm] - zl[lm] / dl * dz[lm]
            dzu[um] = mu / du - zu[um] + zu[um] / du * dz[um]
            return dzl, dzu

        def primal_max(dz):
            a = min(_ftb(dl, dz[lm], tau), _ftb(du, -dz[um], tau))
            return a

        # merit penalty update
        c_now = sc.cons(z)
        cn1 = float(np.abs(c_now).sum())
        gd = float(gphi @ dz)
        if cn1 > 0:
            curv = float(dz[F] @ (K0[:nf, :nf] @ dz[F]))
            need = (gd + 0.5 * max(curv, 0.0)) / ((1 - _RHO) * cn1)
            if nu < need:
                nu = 1.5 * need
        phi0 = merit(z, mu, nu)
        dphi = gd - nu * cn1

        alpha_max = primal_max(dz)
        alpha = alpha_max
        accepted = False
        step_z, step_y, dzl, dzu = dz, dy, None, None
        for k in range(_MAX_BACKTRACK):
            trial = z + alpha * dz
            phit = merit(trial, mu, nu)
            if phit <= phi0 + _ARMIJO * alpha * dphi:
                accepted = True
                break
            if k == 0 and m:
                # second-order correction on the first rejected trial
                c_soc = alpha * c_now + sc.cons(trial)
                rs = -np.concatenate([(gphi + A.T @ y)[F], c_soc])
                s2 = ksolve(rs)
                dsoc = np.zeros(sc.N)
                dsoc[F] = s2[:nf]
                a_soc = primal_max(dsoc)
                t2 = z + a_soc * dsoc
                if merit(t2, mu, nu) <= phi0 + _ARMIJO * alpha * dphi:
                    step_z, step_y, alpha = dsoc, s2[nf:], a_soc
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            stalls += 1
            if stalls >= _MAX_STALLS:
                status = "infeasible_detected"
                message = "line search stalled; no acceptable step"
                break
            alpha = alpha_max * 0.5 ** 10
        else:
            stalls = 0

        dzl, dzu = bound_dual_steps(step_z)
        alpha_d = min(_ftb(zl[lm], dzl[lm], tau), _ftb(zu[um], dzu[um], tau))
        z = z + alpha * step_z
        z[~free] = sc.lo[~free]
        y = y + alpha * step_y
        zl = zl + alpha_d * dzl
        zu = zu + alpha_d * dzu
        dl, du = barrier_terms(z)
        zl[lm] = np.clip(zl[lm], mu / (_KAPPA_SIGMA * dl), _KAPPA_SIGMA * mu / dl)
        zu[um] = np.clip(zu[um], mu / (_KAPPA_SIGMA * du), _KAPPA_SIGMA * mu / du)
        jv, A = jac(z)
        it += 1
        trace.record(z, y, zl, zu)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("it %3d mu %.1e err %.2e viol %.2e alpha %.2e dw %.1e nu %.2e",
                      it, mu, err0, viol, alpha, dw, nu)

    err0, _ = kkt_error(sc, z, y, zl, zu, free, 0.0, A)
    x, s = sc.split(z)
    mult = unscale_multipliers(sc, y, zl, zu)
    return SolveResult(
        status=status, x=x.copy(), multipliers=mult, kkt_residual=float(err0),
        iterations=it, objective=float(problem.objective(x)), slacks=s.copy(),
        scaling={"objective": obj_scale, "eq": de, "ineq": di},
        constraint_violation=sc.raw_violation(z), barrier=mu,
        iterate_hashes=trace.hashes, message=message)


def unscale_multipliers(sc: _Scaled, y, zl, zu) -> dict:
    n, me = sc.n, sc.me
    o = sc.obj_scale
    return {"eq": y[:me] * sc.de / o, "ineq": y[me:] * sc.di / o,
            "lower": zl[:n] / o, "upper": zu[:n] / o,
            "ineq_lower": zl[n:] / o, "ineq_upper": zu[n:] / o}


def scaled_view(problem: NlpProblem, result: SolveResult):
    """Rebuild the scaled working state of ``result``: (view, z, y, zl, zu, free)."""
    scl = result.scaling
    sc = _Scaled(problem, scl["objective"], np.asarray(scl["eq"]), np.asarray(scl["ineq"]))
    mlt = result.multipliers
    o = sc.obj_scale
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.concatenate([np.where(sc.de != 0, mlt["eq"] * o / sc.de, 0.0),
                            np.where(sc.di != 0, mlt["ineq"] * o / sc.di, 0.0)])
    zl = np.concatenate([mlt["lower"], mlt["ineq_lower"]]) * o
    zu = np.concatenate([mlt["upper"], mlt["ineq_upper"]]) * o
    z = np.concatenate([result.x, result.slacks])
    free = sc.lo < sc.hi
    return sc, z, y, zl, zu, free
