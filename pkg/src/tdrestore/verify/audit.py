"""Constraint-by-constraint audit of a restoration schedule against raw case data."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..netmodel import CoupledCase, to_per_unit
from ..solution import RestorationSolution
from .powerflow import branch_losses, bus_admittance, distflow_sweep, newton_power_flow

AUDIT_THRESHOLD = 1e-6


@dataclass
class ValidationReport:
    """Worst residuals (per unit) per family; ``verdict`` is ``"pass"`` iff every
    checked quantity is within its threshold, otherwise ``failures`` itemizes them."""

    max_tn_balance_residual: float = 0.0
    max_dn_balance_residual: float = 0.0
    max_bound_violation: float = 0.0
    max_boundary_mismatch: float = 0.0
    oracle_voltage_deviation: float = 0.0
    kkt_residual: float | None = None
    max_ess_violation: float = 0.0
    max_energy_closure: float = 0.0
    oracle_flow_deviation: float = 0.0
    verdict: str = "pass"
    failures: list[str] = field(default_factory=list)
    threshold: float = AUDIT_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        keys = ["max_tn_balance_residual", "max_dn_balance_residual", "max_bound_violation",
                "max_boundary_mismatch", "oracle_voltage_deviation", "oracle_flow_deviation",
                "max_ess_violation", "max_energy_closure", "kkt_residual"]
        lines = [f"verdict: {self.verdict}"]
        for k in keys:
            v = getattr(self, k)
            lines.append(f"{k}: {'n/a' if v is None else f'{v:.3e}'}")
        lines += [f"FAIL {f}" for f in self.failures]
        return "\n".join(lines)


class _Tracker:
    """Keeps the worst value per family and the named entries above threshold."""

    def __init__(self, threshold):
        self.threshold = threshold
        self.worst: dict[str, float] = {}
        self.items: dict[str, list[tuple[float, str]]] = {}

    def add(self, family: str, value: float, label):
        value = float(value)
        if not math.isfinite(value):
            value = math.inf
        if value > self.worst.get(family, 0.0):
            self.worst[family] = value
        if value > self.threshold:
            self.items.setdefault(family, []).append((value, label() if callable(label) else label))

    def add_array(self, family: str, values: np.ndarray, label):
        """``label(index_tuple)`` names an entry; only offending entries are named."""
        values = np.nan_to_num(np.asarray(values, float), nan=np.inf)
        if values.size == 0:
            return
        self.worst[family] = max(self.worst.get(family, 0.0), float(values.max()))
        for ix in np.argwhere(values > self.threshold):
            self.items.setdefault(family, []).append((float(values[tuple(ix)]), label(tuple(ix))))

    def failures(self, per_family: int = 5) -> list[str]:
        out = []
        for fam, items in self.items.items():
            items = sorted(items, key=lambda e: -e[0])
            for v, lbl in items[:per_family]:
                out.append(f"{fam}: {lbl} = {v:.3e}")
            if len(items) > per_family:
                out.append(f"{fam}: ... {len(items) - per_family} more")
        return out


def _check_dims(case: CoupledCase, sol: RestorationSolution):
    T = case.scenario.periods
    tn = case.transmission
    want = {"V": (T, len(tn.buses)), "theta": (T, len(tn.buses)),
            "gen_p": (T, len(tn.generators)), "gen_q": (T, len(tn.generators)),
            "served_p": (T, len(tn.buses)), "served_q": (T, len(tn.buses))}
    for k, shp in want.items():
        if np.shape(getattr(sol, k)) != shp:
            raise ValueError(f"dimension mismatch for {k}: {np.shape(getattr(sol, k))} != {shp}")
    if sol.periods != T:
        raise ValueError(f"solution has {sol.periods} periods, case has {T}")
    if sorted(f.id for f in sol.feeders) != sorted(f.id for f in case.feeders):
        raise ValueError("feeder set of solution does not match case")
    for f in case.feeders:
        st = sol.feeder(f.id)
        want = {"v": (T, len(f.nodes)), "p_line": (T, len(f.lines)), "dg_p": (T, len(f.dgs)),
                "ess_p": (T, len(f.esss)), "pv_p": (T, len(f.pvs)),
                "served_p": (T, len(f.nodes)), "grid_p": (T,)}
        for k, shp in want.items():
            if np.shape(getattr(st, k)) != shp:
                raise ValueError(f"dimension mismatch for {f.id}.{k}: "
                                 f"{np.shape(getattr(st, k))} != {shp}")
        if sorted(st.node_ids) != sorted(n.id for n in f.nodes):
            raise ValueError(f"node set of {f.id} does not match case")


def _over(v, lo, hi):
    """Violation amount of ``lo <= v <= hi`` (0 when satisfied)."""
    v = np.asarray(v, float)
    return np.maximum(np.maximum(lo - v, v - hi), 0.0)


def audit_solution(case: CoupledCase, sol: RestorationSolution, kkt_residual: float | None = None,
                   threshold: float = AUDIT_THRESHOLD, kkt_threshold: float = 1e-6,
                   run_oracles: bool = True) -> ValidationReport:
    """Recompute every physical and operational constraint of the schedule."""
    case = to_per_unit(case)
    _check_dims(case, sol)
    T = case.scenario.periods
    tn = case.transmission
    ids = [b.id for b in tn.buses]
    bpos = {b: k for k, b in enumerate(ids)}
    trk = _Tracker(threshold)
    s_max = case.scenario.intertie_s_max
    dt = case.scenario.delta_t

    # --- transmission balance, from the admittance matrix
    Y = bus_admittance(tn)
    Vc = sol.V * np.exp(1j * sol.theta)
    S = Vc * np.conj(Vc @ Y.T)
    p_net = -sol.served_p.copy()
    q_net = -sol.served_q.copy()
    for g, gen in enumerate(tn.generators):
        p_net[:, bpos[gen.bus]] += sol.gen_p[:, g]
        q_net[:, bpos[gen.bus]] += sol.gen_q[:, g]
    for f in case.feeders:
        p_net[:, bpos[f.boundary_bus]] -= sol.exchange_p[f.id]
        q_net[:, bpos[f.boundary_bus]] -= sol.exchange_q[f.id]
    trk.add_array("tn_balance", np.abs(S.real - p_net), lambda ix: f"t{ix[0] + 1} bus {ids[ix[1]]} P")
    trk.add_array("tn_balance", np.abs(S.imag - q_net), lambda ix: f"t{ix[0] + 1} bus {ids[ix[1]]} Q")

    # --- transmission bounds
    prof = np.asarray(case.profile("transmission").load_profile, float)
    for k, b in enumerate(tn.buses):
        trk.add_array("bounds", _over(sol.V[:, k], b.v_min, b.v_max)[:, None],
                      lambda ix, b=b: f"t{ix[0] + 1} bus {b.id} V")
        for kind, arr in (("p", sol.served_p), ("q", sol.served_q)):
            tot = prof * getattr(b, f"{kind}_load_total")
            crit = prof * getattr(b, f"{kind}_load_critical")
            lo, hi = np.minimum(tot, crit), np.maximum(tot, crit)
            trk.add_array("bounds", _over(arr[:, k], lo, hi)[:, None],
                          lambda ix, b=b, kind=kind: f"t{ix[0] + 1} bus {b.id} served {kind.upper()}")
    trk.add_array("bounds", _over(sol.theta, -math.pi / 2, math.pi / 2),
                  lambda ix: f"t{ix[0] + 1} bus {ids[ix[1]]} angle")
    trk.add_array("bounds", np.abs(sol.theta[:, 0])[:, None],
                  lambda ix: f"t{ix[0] + 1} reference angle bus {ids[0]}")
    for g, gen in enumerate(tn.generators):
        trk.add_array("bounds", _over(sol.gen_p[:, g], gen.p_min, gen.p_max)[:, None],
                      lambda ix, gen=gen: f"t{ix[0] + 1} generator bus {gen.bus} P")
        trk.add_array("bounds", _over(sol.gen_q[:, g], gen.q_min, gen.q_max)[:, None],
                      lambda ix, gen=gen: f"t{ix[0] + 1} generator bus {gen.bus} Q")

    closure = np.zeros(T)
    closure += sol.gen_p.sum(axis=1) - sol.served_p.sum(axis=1)
    closure -= np.array([branch_losses(tn, sol.V[t], sol.theta[t]) for t in range(T)])

    # --- feeders
    for f in case.feeders:
        st = sol.feeder(f.id)
        npos = {n: k for k, n in enumerate(st.node_ids)}
        lines = {(ln.from_node, ln.to_node): ln for ln in f.lines}
        lines.update({(ln.to_node, ln.from_node): ln for ln in f.lines})
        fprof = np.asarray(case.profile(f.id).load_profile, float)
        pvprof = np.asarray(case.profile(f.id).pv_profile, float)
        inj_p = -st.served_p.copy()
        inj_q = -st.served_q.copy()
        for k, d in enumerate(f.dgs):
            inj_p[:, npos[d.node]] += st.dg_p[:, k]
            inj_q[:, npos[d.node]] += st.dg_q[:, k]
        for k, e in enumerate(f.esss):
            inj_p[:, npos[e.node]] += st.ess_p[:, k]
            inj_q[:, npos[e.node]] += st.ess_q[:, k]
        for k, pv in enumerate(f.pvs):
            inj_p[:, npos[pv.node]] += st.pv_p[:, k]
            inj_q[:, npos[pv.node]] += st.pv_q[:, k]
        sub = npos[f.substation_node]
        bal_p = -inj_p.copy()
        bal_q = -inj_q.copy()
        bal_p[:, sub] -= st.grid_p
        bal_q[:, sub] -= st.grid_q
        line_loss = np.zeros(T)
        for j, (a, b) in enumerate(st.lines):
            if (a, b) not in lines:
                raise ValueError(f"{f.id}: line {a}-{b} not in case")
            ln = lines[(a, b)]
            P, Q, L = st.p_line[:, j], st.q_line[:, j], st.l_line[:, j]
            va, vb = st.v[:, npos[a]], st.v[:, npos[b]]
            drop = vb - (va - 2 * (ln.r * P + ln.x * Q) + (ln.r ** 2 + ln.x ** 2) * L)
            cur = L * va - (P ** 2 + Q ** 2)
            trk.add_array("dn_balance", np.abs(drop)[:, None],
                          lambda ix, a=a, b=b: f"{f.id} t{ix[0] + 1} voltage drop {a}-{b}")
            trk.add_array("dn_balance", np.abs(cur)[:, None],
                          lambda ix, a=a, b=b: f"{f.id} t{ix[0] + 1} current {a}-{b}")
            trk.add_array("bounds", np.maximum(-L, 0)[:, None],
                          lambda ix, a=a, b=b: f"{f.id} t{ix[0] + 1} squared current {a}-{b}")
            bal_p[:, npos[a]] += P
            bal_q[:, npos[a]] += Q
            bal_p[:, npos[b]] -= P - ln.r * L
            bal_q[:, npos[b]] -= Q - ln.x * L
            line_loss += ln.r * L
        trk.add_array("dn_balance", np.abs(bal_p),
                      lambda ix: f"{f.id} t{ix[0] + 1} node {st.node_ids[ix[1]]} P")
        trk.add_array("dn_balance", np.abs(bal_q),
                      lambda ix: f"{f.id} t{ix[0] + 1} node {st.node_ids[ix[1]]} Q")

        for n in f.nodes:
            k = npos[n.id]
            trk.add_array("bounds", _over(st.v[:, k], n.v_sq_min, n.v_sq_max)[:, None],
                          lambda ix, n=n: f"{f.id} t{ix[0] + 1} node {n.id} v")
            for kind, arr in (("p", st.served_p), ("q", st.served_q)):
                tot = fprof * getattr(n, f"{kind}_load_total")
                crit = fprof * getattr(n, f"{kind}_load_critical")
                lo, hi = np.minimum(tot, crit), np.maximum(tot, crit)
                trk.add_array("bounds", _over(arr[:, k], lo, hi)[:, None],
                              lambda ix, n=n, kind=kind:
                              f"{f.id} t{ix[0] + 1} node {n.id} served {kind.upper()}")
        for k, d in enumerate(f.dgs):
            trk.add_array("bounds", _over(st.dg_p[:, k], d.p_min, d.p_max)[:, None],
                          lambda ix, d=d: f"{f.id} t{ix[0] + 1} DG node {d.node} P")
            trk.add_array("bounds", _over(st.dg_q[:, k], d.q_min, d.q_max)[:, None],
                          lambda ix, d=d: f"{f.id} t{ix[0] + 1} DG node {d.node} Q")
        for k, e in enumerate(f.esss):
            P, Q, loss = st.ess_p[:, k], st.ess_q[:, k], st.ess_loss[:, k]
            v = st.v[:, npos[e.node]]
            nm = f"{f.id} ESS node {e.node}"
            trk.add_array("ess", np.maximum(np.hypot(P, Q) - e.s_max, 0)[:, None],
                          lambda ix, nm=nm: f"{nm} t{ix[0] + 1} MVA circle")
            trk.add_array("ess", np.abs(e.r_eq * P ** 2 + e.r_cvt * Q ** 2 - loss * v)[:, None],
                          lambda ix, nm=nm: f"{nm} t{ix[0] + 1} loss")
            drawn = np.cumsum((P + loss) * dt)
            remaining = e.e_surplus - drawn
            trk.add_array("ess", _over(remaining, 0.0, e.e_max)[:, None],
                          lambda ix, nm=nm: f"{nm} t{ix[0] + 1} energy window")
            trk.add_array("bounds", np.maximum(-loss, 0)[:, None],
                          lambda ix, nm=nm: f"{nm} t{ix[0] + 1} loss sign")
        for k, pv in enumerate(f.pvs):
            cap = pv.p_max * pvprof
            P, Q = st.pv_p[:, k], st.pv_q[:, k]
            trk.add_array("bounds", _over(P, 0.0, cap)[:, None],
                          lambda ix, pv=pv: f"{f.id} t{ix[0] + 1} PV node {pv.node} P")
            trk.add_array("bounds", np.maximum(np.abs(Q) - pv.power_factor * P, 0)[:, None],
                          lambda ix, pv=pv: f"{f.id} t{ix[0] + 1} PV node {pv.node} Q")

        # boundary consensus
        b = bpos[f.boundary_bus]
        trk.add_array("boundary", np.abs(sol.exchange_p[f.id] - st.grid_p)[:, None],
                      lambda ix: f"{f.id} t{ix[0] + 1} P")
        trk.add_array("boundary", np.abs(sol.exchange_q[f.id] - st.grid_q)[:, None],
                      lambda ix: f"{f.id} t{ix[0] + 1} Q")
        trk.add_array("boundary", np.abs(sol.V[:, b] ** 2 - st.v[:, sub])[:, None],
                      lambda ix: f"{f.id} t{ix[0] + 1} voltage")
        for arr, nm in ((st.grid_p, "P"), (st.grid_q, "Q")):
            trk.add_array("bounds", _over(arr, -s_max, s_max)[:, None],
                          lambda ix, nm=nm: f"{f.id} t{ix[0] + 1} exchange {nm}")

        closure += (st.dg_p.sum(axis=1) + st.ess_p.sum(axis=1) + st.pv_p.sum(axis=1)
                    - st.served_p.sum(axis=1) - line_loss)

        if run_oracles:
            for t in range(T):
                res = distflow_sweep(f, inj_p[t], inj_q[t], st.v[t, sub])
                lbl = f"{f.id} t{t + 1}"
                if not res.converged:
                    trk.add("oracle_voltage", math.inf, f"{lbl} DistFlow sweep diverged")
                    continue
                trk.add("oracle_voltage", np.abs(res.v - st.v[t, [npos[n] for n in res.node_ids]]).max(),
                        f"{lbl} DistFlow voltage")
                jmap = {ab: j for j, ab in enumerate(st.lines)}
                for k, ab in enumerate(res.lines):
                    j = jmap.get(ab)
                    if j is None:
                        trk.add("oracle_flow", math.inf, f"{lbl} line {ab} orientation differs")
                        continue
                    dev = max(abs(res.P[k] - st.p_line[t, j]), abs(res.Q[k] - st.q_line[t, j]),
                              abs(res.l[k] - st.l_line[t, j]))
                    trk.add("oracle_flow", dev, f"{lbl} DistFlow flow {ab[0]}-{ab[1]}")
                trk.add("oracle_flow", max(abs(res.grid_p - st.grid_p[t]),
                                           abs(res.grid_q - st.grid_q[t])),
                        f"{lbl} DistFlow substation exchange")

    trk.add_array("energy_closure", np.abs(closure)[:, None],
                  lambda ix: f"t{ix[0] + 1} generation - load - losses")

    if run_oracles:
        slack = ids[0]
        for t in range(T):
            res = newton_power_flow(tn, p_net[t], q_net[t], slack, v_slack=sol.V[t, 0],
                                    theta_slack=0.0)
            if not res.converged:
                trk.add("oracle_voltage", math.inf, f"t{t + 1} Newton power flow diverged")
                continue
            dev = max(np.abs(res.V - sol.V[t]).max(), np.abs(res.theta - sol.theta[t]).max())
            trk.add("oracle_voltage", dev, f"t{t + 1} Newton power flow V/angle")
            gen_slack = sum(sol.gen_p[t, g] for g, gen in enumerate(tn.generators) if gen.bus == slack)
            slack_p = gen_slack - sol.served_p[t, 0] - sum(
                sol.exchange_p[f.id][t] for f in case.feeders if f.boundary_bus == slack)
            trk.add("oracle_flow", abs(res.slack_injection.real - slack_p),
                    f"t{t + 1} Newton slack injection")

    if kkt_residual is not None:
        trk_k = _Tracker(kkt_threshold)
        trk_k.add("kkt", kkt_residual, "solver optimality error")
        trk.items.update(trk_k.items)

    w = trk.worst
    report = ValidationReport(
        max_tn_balance_residual=w.get("tn_balance", 0.0),
        max_dn_balance_residual=w.get("dn_balance", 0.0),
        max_bound_violation=w.get("bounds", 0.0),
        max_boundary_mismatch=w.get("boundary", 0.0),
        oracle_voltage_deviation=w.get("oracle_voltage", 0.0),
        oracle_flow_deviation=w.get("oracle_flow", 0.0),
        max_ess_violation=w.get("ess", 0.0),
        max_energy_closure=w.get("energy_closure", 0.0),
        kkt_residual=kkt_residual, threshold=threshold)
    report.failures = trk.failures()
    report.verdict = "fail" if report.failures else "pass"
    return report
