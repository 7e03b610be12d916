"""Restoration program: objective, constraint families, bounds and assembly.

All builders expect a per-unit case (see :func:`tdrestore.netmodel.to_per_unit`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..netmodel import CoupledCase, to_per_unit, validate_case
from ..nlp import NlpProblem, SparsePattern
from ..solution import RestorationSolution, empty_solution
from .index import VariableIndex, index_variables
from .terms import AcpfTerms, PolyTerms, admittance_entries

ANGLE_LIMIT = math.pi / 2


class _Rows:
    """Incremental builder of polynomial constraint rows."""

    def __init__(self):
        self.names: list[str] = []
        self.const: list[float] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.lin = ([], [], [])
        self.quad = ([], [], [], [])

    def new(self, name, const=0.0, lower=0.0, upper=0.0) -> int:
        self.names.append(name)
        self.const.append(const)
        self.lower.append(lower)
        self.upper.append(upper)
        return len(self.names) - 1

    def add(self, row, col, coef):
        self.lin[0].append(row)
        self.lin[1].append(int(col))
        self.lin[2].append(coef)

    def add_quad(self, row, a, b, coef):
        self.quad[0].append(row)
        self.quad[1].append(int(a))
        self.quad[2].append(int(b))
        self.quad[3].append(coef)

    def terms(self) -> PolyTerms:
        return PolyTerms(len(self.names), self.lin, self.quad, self.const)


@dataclass
class ConstraintGroup:
    """A family of rows; ``lower``/``upper`` are used for inequality groups only."""

    name: str
    kind: str
    row_names: list[str]
    terms: list
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.row_names)


def _group(name, kind, rows: _Rows, extra_terms=()) -> ConstraintGroup:
    return ConstraintGroup(name, kind, rows.names, [rows.terms(), *extra_terms],
                           np.array(rows.lower, float), np.array(rows.upper, float))


@dataclass
class LinearObjective:
    """``f(x) = const + c @ x``, split into the unserved-energy and penalty parts."""

    c_unserved: np.ndarray
    const: float
    c_penalty: np.ndarray

    @property
    def c(self) -> np.ndarray:
        return self.c_unserved + self.c_penalty

    def __call__(self, x):
        if getattr(x, "dtype", None) == np.longdouble:
            # extended precision for derivative checks; the value is ~1e9 with the penalty
            return np.longdouble(self.const) + self.c.astype(np.longdouble) @ x
        return float(self.const + self.c @ x)

    def gradient(self, x) -> np.ndarray:
        return self.c.copy()

    def split(self, x) -> dict:
        unserved = float(self.const + self.c_unserved @ x)
        penalty = float(self.c_penalty @ x)
        return {"unserved": unserved, "penalty": penalty, "total": unserved + penalty}


def load_totals(case: CoupledCase, idx: VariableIndex):
    """Per-period (total, critical) served-load arrays for TN load slots and feeders."""
    T = idx.periods
    buses = {b.id: b for b in case.transmission.buses}
    prof = np.asarray(case.profile("transmission").load_profile, float)
    tn = {}
    for kind in ("p", "q"):
        tot = np.array([getattr(buses[b], f"{kind}_load_total") for b in idx.load_buses])
        crit = np.array([getattr(buses[b], f"{kind}_load_critical") for b in idx.load_buses])
        tn[kind] = (np.outer(prof, tot), np.outer(prof, crit))
    fd = {}
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        nodes = {n.id: n for n in f.nodes}
        fprof = np.asarray(case.profile(f.id).load_profile, float)
        fd[fs.id] = {}
        for kind in ("p", "q"):
            tot = np.array([getattr(nodes[n], f"{kind}_load_total") for n in fs.load_nodes])
            crit = np.array([getattr(nodes[n], f"{kind}_load_critical") for n in fs.load_nodes])
            fd[fs.id][kind] = (np.outer(fprof, tot), np.outer(fprof, crit))
    assert T == len(prof)
    return tn, fd


def build_objective(case: CoupledCase, idx: VariableIndex) -> LinearObjective:
    """Weighted unserved energy plus the per-MW, per-period central generation penalty.

    Values are in MWh-weighted objective units; per-unit variables are scaled
    back by the system base.
    """
    sc = case.scenario
    base = sc.system_base
    c_un = np.zeros(idx.n)
    c_pen = np.zeros(idx.n)
    const = 0.0
    tn, fd = load_totals(case, idx)
    served = ~idx.load_is_boundary
    tot = tn["p"][0][:, served]
    w = sc.w_t * sc.delta_t * base
    const += w * tot.sum()
    np.add.at(c_un, idx.load_p[:, served].ravel(), -w)
    for fs in idx.feeders:
        w = sc.w_d * sc.delta_t * base
        const += w * fd[fs.id]["p"][0].sum()
        np.add.at(c_un, fs.load_p.ravel(), -w)
    np.add.at(c_pen, idx.gen_p.ravel(), sc.central_gen_penalty * base)
    return LinearObjective(c_un, const, c_pen)


def add_tn_power_flow(case: CoupledCase, idx: VariableIndex) -> list[ConstraintGroup]:
    tn = case.transmission
    T, nb = idx.periods, len(idx.bus_ids)
    rows = _Rows()
    rowp = np.zeros((T, nb), dtype=np.int64)
    rowq = np.zeros((T, nb), dtype=np.int64)
    for t in range(T):
        for i, b in enumerate(idx.bus_ids):
            rowp[t, i] = rows.new(f"t{t + 1}.tn_balance_P[{b}]")
            rowq[t, i] = rows.new(f"t{t + 1}.tn_balance_Q[{b}]")
        for g, b in enumerate(idx.gen_buses):
            i = idx.bus_pos(b)
            rows.add(rowp[t, i], idx.gen_p[t, g], -1.0)
            rows.add(rowq[t, i], idx.gen_q[t, g], -1.0)
        for j, b in enumerate(idx.load_buses):
            i = idx.bus_pos(b)
            rows.add(rowp[t, i], idx.load_p[t, j], 1.0)
            rows.add(rowq[t, i], idx.load_q[t, j], 1.0)
    entries = admittance_entries(idx.bus_ids, tn.branches)
    acpf = AcpfTerms(len(rows.names), entries, idx.V, idx.theta, rowp, rowq)
    return [_group("tn_power_flow", "eq", rows, [acpf])]


def add_dn_power_flow(case: CoupledCase, idx: VariableIndex) -> list[ConstraintGroup]:
    groups = []
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        rows = _Rows()
        npos = {n: k for k, n in enumerate(fs.node_ids)}
        for t in range(idx.periods):
            p = f"t{t + 1}.{fs.id}"
            bal_p = {n: rows.new(f"{p}.balance_P[{n}]") for n in fs.node_ids}
            bal_q = {n: rows.new(f"{p}.balance_Q[{n}]") for n in fs.node_ids}
            for l, (a, b, ln) in enumerate(fs.lines):
                P, Q, L = fs.p_line[t, l], fs.q_line[t, l], fs.l_line[t, l]
                va, vb = fs.v[t, npos[a]], fs.v[t, npos[b]]
                r = rows.new(f"{p}.vdrop[{a}-{b}]")
                rows.add(r, vb, 1.0)
                rows.add(r, va, -1.0)
                rows.add(r, P, 2 * ln.r)
                rows.add(r, Q, 2 * ln.x)
                rows.add(r, L, -(ln.r**2 + ln.x**2))
                r = rows.new(f"{p}.current[{a}-{b}]")
                rows.add_quad(r, L, va, 1.0)
                rows.add_quad(r, P, P, -1.0)
                rows.add_quad(r, Q, Q, -1.0)
                # sending end a: outflow P; receiving end b: inflow P - r*l
                rows.add(bal_p[a], P, 1.0)
                rows.add(bal_q[a], Q, 1.0)
                rows.add(bal_p[b], P, -1.0)
                rows.add(bal_p[b], L, ln.r)
                rows.add(bal_q[b], Q, -1.0)
                rows.add(bal_q[b], L, ln.x)
            rows.add(bal_p[f.substation_node], fs.grid_p[t], -1.0)
            rows.add(bal_q[f.substation_node], fs.grid_q[t], -1.0)
            for slot_p, slot_q, devs in ((fs.dg_p, fs.dg_q, f.dgs), (fs.ess_p, fs.ess_q, f.esss),
                                         (fs.pv_p, fs.pv_q, f.pvs)):
                for k, d in enumerate(devs):
                    rows.add(bal_p[d.node], slot_p[t, k], -1.0)
                    rows.add(bal_q[d.node], slot_q[t, k], -1.0)
            for j, n in enumerate(fs.load_nodes):
                rows.add(bal_p[n], fs.load_p[t, j], 1.0)
                rows.add(bal_q[n], fs.load_q[t, j], 1.0)
        groups.append(_group(f"{fs.id}.dn_power_flow", "eq", rows))
    return groups


def add_ess_constraints(case: CoupledCase, idx: VariableIndex) -> list[ConstraintGroup]:
    dt = case.scenario.delta_t
    eq, ineq = _Rows(), _Rows()
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        for k, e in enumerate(f.esss):
            vpos = fs.node_pos(e.node)
            for t in range(idx.periods):
                p = f"t{t + 1}.{fs.id}.ess[{e.node}#{k}]"
                P, Q, loss = fs.ess_p[t, k], fs.ess_q[t, k], fs.ess_loss[t, k]
                r = eq.new(f"{p}.loss")
                eq.add_quad(r, P, P, e.r_eq)
                eq.add_quad(r, Q, Q, e.r_cvt)
                eq.add_quad(r, loss, fs.v[t, vpos], -1.0)
                r = ineq.new(f"{p}.mva", lower=-np.inf, upper=e.s_max**2)
                ineq.add_quad(r, P, P, 1.0)
                ineq.add_quad(r, Q, Q, 1.0)
                # drawn energy up to and including t: e_surplus - drawn in [0, e_max]
                r = ineq.new(f"{p}.energy", lower=e.e_surplus - e.e_max, upper=e.e_surplus)
                for s in range(t + 1):
                    ineq.add(r, fs.ess_p[s, k], dt)
                    ineq.add(r, fs.ess_loss[s, k], dt)
    return [_group("ess_loss", "eq", eq), _group("ess_limits", "ineq", ineq)]


def pv_caps(case: CoupledCase, idx: VariableIndex) -> dict[str, np.ndarray]:
    caps = {}
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        prof = np.asarray(case.profile(f.id).pv_profile, float)
        caps[fs.id] = np.outer(prof, [pv.p_max for pv in f.pvs]).reshape(idx.periods, len(f.pvs))
    return caps


def add_pv_constraints(case: CoupledCase, idx: VariableIndex) -> list[ConstraintGroup]:
    rows = _Rows()
    caps = pv_caps(case, idx)
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        for k, pv in enumerate(f.pvs):
            for t in range(idx.periods):
                if caps[fs.id][t, k] <= 0:
                    continue  # output and reactive power pinned to zero by bounds
                p = f"t{t + 1}.{fs.id}.pv[{pv.node}#{k}]"
                r = rows.new(f"{p}.q_upper", lower=-np.inf, upper=0.0)
                rows.add(r, fs.pv_q[t, k], 1.0)
                rows.add(r, fs.pv_p[t, k], -pv.power_factor)
                r = rows.new(f"{p}.q_lower", lower=0.0, upper=np.inf)
                rows.add(r, fs.pv_q[t, k], 1.0)
                rows.add(r, fs.pv_p[t, k], pv.power_factor)
    return [_group("pv_limits", "ineq", rows)]


def add_boundary(case: CoupledCase, idx: VariableIndex) -> list[ConstraintGroup]:
    rows = _Rows()
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        j = idx.load_buses.index(fs.boundary_bus)
        i = idx.bus_pos(fs.boundary_bus)
        sub = fs.node_pos(f.substation_node)
        for t in range(idx.periods):
            p = f"t{t + 1}.{fs.id}.boundary"
            r = rows.new(f"{p}.P")
            rows.add(r, idx.load_p[t, j], 1.0)
            rows.add(r, fs.grid_p[t], -1.0)
            r = rows.new(f"{p}.Q")
            rows.add(r, idx.load_q[t, j], 1.0)
            rows.add(r, fs.grid_q[t], -1.0)
            r = rows.new(f"{p}.V")
            rows.add_quad(r, idx.V[t, i], idx.V[t, i], 1.0)
            rows.add(r, fs.v[t, sub], -1.0)
    return [_group("boundary", "eq", rows)]


def add_ramp_limits(case: CoupledCase, idx: VariableIndex, limit: float) -> list[ConstraintGroup]:
    """Optional |P_g(t+1) - P_g(t)| <= limit (per unit)."""
    rows = _Rows()
    for g, b in enumerate(idx.gen_buses):
        for t in range(idx.periods - 1):
            r = rows.new(f"t{t + 2}.ramp[{b}#{g}]", lower=-limit, upper=limit)
            rows.add(r, idx.gen_p[t + 1, g], 1.0)
            rows.add(r, idx.gen_p[t, g], -1.0)
    return [_group("ramp", "ineq", rows)]


def apply_bounds(case: CoupledCase, idx: VariableIndex) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(idx.n, -np.inf)
    hi = np.full(idx.n, np.inf)
    tn = case.transmission
    s = case.scenario.intertie_s_max

    for i, b in enumerate(tn.buses):
        lo[idx.V[:, i]], hi[idx.V[:, i]] = b.v_min, b.v_max
    lo[idx.theta], hi[idx.theta] = -ANGLE_LIMIT, ANGLE_LIMIT
    lo[idx.theta[:, 0]] = hi[idx.theta[:, 0]] = 0.0     # reference angle
    for g, gen in enumerate(tn.generators):
        lo[idx.gen_p[:, g]], hi[idx.gen_p[:, g]] = gen.p_min, gen.p_max
        lo[idx.gen_q[:, g]], hi[idx.gen_q[:, g]] = gen.q_min, gen.q_max

    tnl, fdl = load_totals(case, idx)
    for kind, slot in (("p", idx.load_p), ("q", idx.load_q)):
        tot, crit = tnl[kind]
        lo[slot] = np.minimum(tot, crit)
        hi[slot] = np.maximum(tot, crit)
        bnd = slot[:, idx.load_is_boundary]
        lo[bnd], hi[bnd] = -s, s

    caps = pv_caps(case, idx)
    for fs in idx.feeders:
        f = case.feeder(fs.id)
        for k, n in enumerate(f.nodes):
            lo[fs.v[:, k]], hi[fs.v[:, k]] = n.v_sq_min, n.v_sq_max
        # l >= 0 and loss >= 0 follow from their defining equalities while v > 0;
        # stating them as bounds makes both active at zero flow and breaks LICQ
        for k, d in enumerate(f.dgs):
            lo[fs.dg_p[:, k]], hi[fs.dg_p[:, k]] = d.p_min, d.p_max
            lo[fs.dg_q[:, k]], hi[fs.dg_q[:, k]] = d.q_min, d.q_max
        for k, e in enumerate(f.esss):
            for slot in (fs.ess_p, fs.ess_q):
                lo[slot[:, k]], hi[slot[:, k]] = -e.s_max, e.s_max
        for k, pv in enumerate(f.pvs):
            cap = caps[fs.id][:, k]
            lo[fs.pv_p[:, k]], hi[fs.pv_p[:, k]] = 0.0, cap
            lo[fs.pv_q[:, k]], hi[fs.pv_q[:, k]] = -pv.power_factor * cap, pv.power_factor * cap
        for kind, slot in (("p", fs.load_p), ("q", fs.load_q)):
            tot, crit = fdl[fs.id][kind]
            lo[slot] = np.minimum(tot, crit)
            hi[slot] = np.maximum(tot, crit)
        for slot in (fs.grid_p, fs.grid_q):
            lo[slot], hi[slot] = -s, s
    return lo, hi


def start_hints(case: CoupledCase, idx: VariableIndex) -> np.ndarray:
    """Flat start: unit voltages, zero angles and flows, loads at critical level,
    injections at the midpoint of their bounds, zero exchange."""
    lo, hi = apply_bounds(case, idx)
    with np.errstate(invalid="ignore"):
        x = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
    x[idx.V] = 1.0
    x[idx.theta] = 0.0
    tnl, fdl = load_totals(case, idx)
    for kind, slot in (("p", idx.load_p), ("q", idx.load_q)):
        crit = tnl[kind][1]
        served = ~idx.load_is_boundary
        x[slot[:, served]] = crit[:, served]
        x[slot[:, idx.load_is_boundary]] = 0.0
    for fs in idx.feeders:
        x[fs.v] = 1.0
        x[fs.p_line] = x[fs.q_line] = x[fs.l_line] = 0.0
        x[fs.ess_loss] = 0.0
        x[fs.grid_p] = x[fs.grid_q] = 0.0
        x[fs.load_p] = fdl[fs.id]["p"][1]
        x[fs.load_q] = fdl[fs.id]["q"][1]
    return np.clip(x, lo, hi)


@dataclass
class RestorationProblem:
    """The assembled program together with the layout needed to read it back."""

    case: CoupledCase
    index: VariableIndex
    objective: LinearObjective
    groups: list[ConstraintGroup]
    nlp: NlpProblem
    hints: np.ndarray = field(repr=False, default=None)


class _Stack:
    """Concatenation of constraint groups of one kind into a single row space."""

    def __init__(self, groups: list[ConstraintGroup], n: int):
        self.groups = groups
        self.m = sum(g.size for g in groups)
        self.names = [nm for g in groups for nm in g.row_names]
        self.parts = []
        off = 0
        raw_r, raw_c, h_r, h_c = [], [], [], []
        for g in groups:
            for term in g.terms:
                self.parts.append((off, term))
                raw_r.append(term.jac_rows + off)
                raw_c.append(term.jac_cols)
                h_r.append(term.hess_rows)
                h_c.append(term.hess_cols)
            off += g.size
        cat = (lambda a: np.concatenate(a) if a else np.zeros(0, dtype=np.int64))
        self.jac = SparsePattern(cat(raw_r), cat(raw_c), (self.m, n))
        self.hess_raw = (cat(h_r), cat(h_c))
        if groups and groups[0].kind == "ineq":
            self.lower = np.concatenate([g.lower for g in groups]) if groups else np.zeros(0)
            self.upper = np.concatenate([g.upper for g in groups]) if groups else np.zeros(0)

    def values(self, x):
        out = np.zeros(self.m)
        for off, term in self.parts:
            out[off:off + term.nrows] += term.values(x)
        return out

    def jac_values(self, x):
        if not self.parts:
            return np.zeros(0)
        return self.jac.reduce(np.concatenate([t.jac_values(x) for _, t in self.parts]))

    def hess_values(self, x, lam):
        if not self.parts:
            return np.zeros(0)
        return np.concatenate([t.hess_values(x, lam[off:off + t.nrows]) for off, t in self.parts])


def assemble(case: CoupledCase, ramp_limit: float | None = None,
             check: bool = True) -> RestorationProblem:
    """Build the full restoration NLP for ``case`` (converted to per unit)."""
    if check:
        outcome = validate_case(case)
        if not outcome.ok:
            raise ValueError("invalid case:\n  " + "\n  ".join(outcome.errors))
    case = to_per_unit(case)
    idx = index_variables(case)
    obj = build_objective(case, idx)
    groups = (add_tn_power_flow(case, idx) + add_dn_power_flow(case, idx)
              + add_ess_constraints(case, idx) + add_boundary(case, idx)
              + add_pv_constraints(case, idx))
    # an explicit limit is in MW; the scenario one is already per unit here
    if ramp_limit is None:
        ramp_limit = case.scenario.ramp_limit
    else:
        ramp_limit = ramp_limit / case.scenario.system_base
    if ramp_limit is not None:
        groups += add_ramp_limits(case, idx, ramp_limit)
    lo, hi = apply_bounds(case, idx)

    eq = _Stack([g for g in groups if g.kind == "eq"], idx.n)
    ineq = _Stack([g for g in groups if g.kind == "ineq"], idx.n)
    if not ineq.groups:
        ineq.lower = ineq.upper = np.zeros(0)
    hr = np.concatenate([eq.hess_raw[0], ineq.hess_raw[0]])
    hc = np.concatenate([eq.hess_raw[1], ineq.hess_raw[1]])
    hess = SparsePattern(hr, hc, (idx.n, idx.n))

    def hess_values(x, obj_factor, lam_eq, lam_ineq):
        # the objective is linear, so obj_factor never contributes
        return hess.reduce(np.concatenate([eq.hess_values(x, lam_eq),
                                           ineq.hess_values(x, lam_ineq)]))

    nlp = NlpProblem(
        n=idx.n, lower=lo, upper=hi, objective=obj, gradient=obj.gradient,
        eq=eq.values, eq_jac_rows=eq.jac.rows, eq_jac_cols=eq.jac.cols,
        eq_jac_values=eq.jac_values,
        ineq=ineq.values, ineq_lower=ineq.lower, ineq_upper=ineq.upper,
        ineq_jac_rows=ineq.jac.rows, ineq_jac_cols=ineq.jac.cols,
        ineq_jac_values=ineq.jac_values,
        hess_rows=hess.rows, hess_cols=hess.cols, hess_values=hess_values,
        var_names=idx.names, eq_names=eq.names, ineq_names=ineq.names,
        info={"objective_scale_hint": None})
    return RestorationProblem(case, idx, obj, groups, nlp, start_hints(case, idx))


def extract_solution(problem: RestorationProblem, x) -> RestorationSolution:
    """Read a solver point back into a :class:`RestorationSolution` (per unit)."""
    x = np.asarray(x, dtype=float)
    idx = problem.index
    sol = empty_solution(problem.case)
    sol.V[:] = x[idx.V]
    sol.theta[:] = x[idx.theta]
    sol.gen_p[:] = x[idx.gen_p]
    sol.gen_q[:] = x[idx.gen_q]
    for j, b in enumerate(idx.load_buses):
        if idx.load_is_boundary[j]:
            continue
        i = idx.bus_pos(b)
        sol.served_p[:, i] = x[idx.load_p[:, j]]
        sol.served_q[:, i] = x[idx.load_q[:, j]]
    for fs in idx.feeders:
        j = idx.load_buses.index(fs.boundary_bus)
        sol.exchange_p[fs.id] = x[idx.load_p[:, j]].copy()
        sol.exchange_q[fs.id] = x[idx.load_q[:, j]].copy()
        st = sol.feeder(fs.id)
        for name in ("v", "p_line", "q_line", "l_line", "dg_p", "dg_q", "ess_p", "ess_q",
                     "ess_loss", "pv_p", "pv_q"):
            getattr(st, name)[:] = x[getattr(fs, name)]
        for j, n in enumerate(fs.load_nodes):
            k = st.node_pos(n)
            st.served_p[:, k] = x[fs.load_p[:, j]]
            st.served_q[:, k] = x[fs.load_q[:, j]]
        st.grid_p[:] = x[fs.grid_p]
        st.grid_q[:] = x[fs.grid_q]
    return sol
