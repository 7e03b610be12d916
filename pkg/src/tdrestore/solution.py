"""Solver-independent container for a restoration schedule (per-unit values).

Both the formulation (which fills it from a solver point) and the verify module
(which audits it) depend on this module; neither depends on the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import CoupledCase, oriented_lines

STATE_COLUMNS = ("network", "period", "quantity", "element", "value")


@dataclass
class FeederState:
    id: str
    node_ids: list[int]
    lines: list[tuple[int, int]]     # oriented away from the substation
    v: np.ndarray                    # (T, nodes) squared voltage
    p_line: np.ndarray               # (T, lines) sending-end flows
    q_line: np.ndarray
    l_line: np.ndarray               # squared current
    dg_p: np.ndarray                 # (T, devices)
    dg_q: np.ndarray
    ess_p: np.ndarray
    ess_q: np.ndarray
    ess_loss: np.ndarray
    pv_p: np.ndarray
    pv_q: np.ndarray
    served_p: np.ndarray             # (T, nodes); zero where a node has no load
    served_q: np.ndarray
    grid_p: np.ndarray               # (T,) import at the substation
    grid_q: np.ndarray

    def node_pos(self, node: int) -> int:
        return self.node_ids.index(node)


@dataclass
class RestorationSolution:
    """Full operating state for every period.

    ``served_p``/``served_q`` hold served native load per TN bus (zero where the
    bus has none); the feeder exchange seen by the TN at each boundary bus is
    kept separately in ``exchange_p``/``exchange_q`` keyed by feeder id.
    """

    periods: int
    base_mva: float
    bus_ids: list[int]
    V: np.ndarray
    theta: np.ndarray
    gen_buses: list[int]
    gen_p: np.ndarray
    gen_q: np.ndarray
    served_p: np.ndarray
    served_q: np.ndarray
    exchange_p: dict[str, np.ndarray]
    exchange_q: dict[str, np.ndarray]
    feeders: list[FeederState] = field(default_factory=list)

    def feeder(self, fid: str) -> FeederState:
        return next(f for f in self.feeders if f.id == fid)

    def copy(self) -> "RestorationSolution":
        def cp(v):
            if isinstance(v, np.ndarray):
                return v.copy()
            if isinstance(v, dict):
                return {k: cp(a) for k, a in v.items()}
            if isinstance(v, list):
                return [cp(a) for a in v]
            if isinstance(v, FeederState):
                return FeederState(**{k: cp(a) for k, a in vars(v).items()})
            return v
        return RestorationSolution(**{k: cp(v) for k, v in vars(self).items()})


_TN_FIELDS = (("V", "bus"), ("theta", "bus"), ("gen_p", "gen"), ("gen_q", "gen"),
              ("served_p", "bus"), ("served_q", "bus"))
_FD_FIELDS = (("v", "node"), ("p_line", "line"), ("q_line", "line"), ("l_line", "line"),
              ("dg_p", "dg"), ("dg_q", "dg"), ("ess_p", "ess"), ("ess_q", "ess"),
              ("ess_loss", "ess"), ("pv_p", "pv"), ("pv_q", "pv"), ("served_p", "node"),
              ("served_q", "node"))


def empty_solution(case: CoupledCase) -> RestorationSolution:
    """All-zero state shaped for ``case`` (voltages at 1)."""
    T = case.scenario.periods
    tn = case.transmission
    nb, ng = len(tn.buses), len(tn.generators)
    z = lambda k: np.zeros((T, k))  # noqa: E731
    feeders = []
    for f in case.feeders:
        lines = [(a, b) for a, b, _ in oriented_lines(f)]
        nn, nl = len(f.nodes), len(lines)
        feeders.append(FeederState(
            id=f.id, node_ids=[n.id for n in f.nodes], lines=lines, v=np.ones((T, nn)),
            p_line=z(nl), q_line=z(nl), l_line=z(nl), dg_p=z(len(f.dgs)), dg_q=z(len(f.dgs)),
            ess_p=z(len(f.esss)), ess_q=z(len(f.esss)), ess_loss=z(len(f.esss)),
            pv_p=z(len(f.pvs)), pv_q=z(len(f.pvs)), served_p=z(nn), served_q=z(nn),
            grid_p=np.zeros(T), grid_q=np.zeros(T)))
    return RestorationSolution(
        periods=T, base_mva=case.scenario.system_base, bus_ids=[b.id for b in tn.buses],
        V=np.ones((T, nb)), theta=z(nb), gen_buses=[g.bus for g in tn.generators],
        gen_p=z(ng), gen_q=z(ng), served_p=z(nb), served_q=z(nb),
        exchange_p={f.id: np.zeros(T) for f in case.feeders},
        exchange_q={f.id: np.zeros(T) for f in case.feeders}, feeders=feeders)


def _labels(sol: RestorationSolution, kind: str, fs: FeederState | None = None):
    if kind == "bus":
        return [str(b) for b in sol.bus_ids]
    if kind == "gen":
        return [f"{b}#{k}" for k, b in enumerate(sol.gen_buses)]
    if kind == "node":
        return [str(n) for n in fs.node_ids]
    if kind == "line":
        return [f"{a}-{b}" for a, b in fs.lines]
    width = getattr(fs, {"dg": "dg_p", "ess": "ess_p", "pv": "pv_p"}[kind]).shape[1]
    return [f"{kind}#{k}" for k in range(width)]


def to_records(sol: RestorationSolution) -> list[tuple]:
    """Long-format rows ``(network, period, quantity, element, value)``; periods are 1-based."""
    out = []
    for t in range(sol.periods):
        for name, kind in _TN_FIELDS:
            arr = getattr(sol, name)
            for lbl, v in zip(_labels(sol, kind), arr[t]):
                out.append(("transmission", t + 1, name, lbl, float(v)))
        for fid in sol.exchange_p:
            out.append(("transmission", t + 1, "exchange_p", fid, float(sol.exchange_p[fid][t])))
            out.append(("transmission", t + 1, "exchange_q", fid, float(sol.exchange_q[fid][t])))
        for fs in sol.feeders:
            for name, kind in _FD_FIELDS:
                arr = getattr(fs, name)
                for lbl, v in zip(_labels(sol, kind, fs), arr[t]):
                    out.append((fs.id, t + 1, name, lbl, float(v)))
            out.append((fs.id, t + 1, "grid_p", "substation", float(fs.grid_p[t])))
            out.append((fs.id, t + 1, "grid_q", "substation", float(fs.grid_q[t])))
    return out


def from_records(case: CoupledCase, records) -> RestorationSolution:
    """Inverse of :func:`to_records` for the (per-unit) ``case`` the rows belong to.

    Raises ``ValueError`` on unknown networks, quantities, elements or periods
    and when any expected entry is missing.
    """
    sol = empty_solution(case)
    seen = set()
    tn_pos = {name: {lbl: k for k, lbl in enumerate(_labels(sol, kind))} for name, kind in _TN_FIELDS}
    fd_pos = {fs.id: {name: {lbl: k for k, lbl in enumerate(_labels(sol, kind, fs))}
                      for name, kind in _FD_FIELDS} for fs in sol.feeders}
    for row in records:
        net, period, qty, elem, val = row
        t = int(period) - 1
        if not 0 <= t < sol.periods:
            raise ValueError(f"period {period} outside 1..{sol.periods}")
        val = float(val)
        if net == "transmission":
            if qty in ("exchange_p", "exchange_q"):
                tgt = getattr(sol, qty)
                if elem not in tgt:
                    raise ValueError(f"unknown feeder {elem!r} in {qty}")
                tgt[elem][t] = val
            elif qty in tn_pos and elem in tn_pos[qty]:
                getattr(sol, qty)[t, tn_pos[qty][elem]] = val
            else:
                raise ValueError(f"unknown transmission entry {qty}[{elem}]")
        elif net in fd_pos:
            fs = sol.feeder(net)
            if qty in ("grid_p", "grid_q"):
                getattr(fs, qty)[t] = val
            elif qty in fd_pos[net] and elem in fd_pos[net][qty]:
                getattr(fs, qty)[t, fd_pos[net][qty][elem]] = val
            else:
                raise ValueError(f"unknown entry {qty}[{elem}] for feeder {net}")
        else:
            raise ValueError(f"unknown network {net!r}")
        seen.add((net, t, qty, elem))
    expected = {(r[0], r[1] - 1, r[2], r[3]) for r in to_records(sol)}
    missing = expected - seen
    if missing:
        ex = sorted(missing)[0]
        raise ValueError(f"{len(missing)} state entries missing, e.g. {ex[0]} t{ex[1] + 1} {ex[2]}[{ex[3]}]")
    return sol
