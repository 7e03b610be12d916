"""Variable layout of the multi-period restoration program.

Ordering is period-major; inside a period the transmission block comes first,
then each feeder in the order it appears in the case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..netmodel import CoupledCase, FeederLine, oriented_lines


class _Allocator:
    def __init__(self):
        self.names: list[str] = []

    def take(self, labels: list[str]) -> np.ndarray:
        start = len(self.names)
        self.names.extend(labels)
        return np.arange(start, start + len(labels), dtype=np.int64)


def _stack(rows: list[np.ndarray], width: int) -> np.ndarray:
    if not rows:
        return np.zeros((0, width), dtype=np.int64)
    return np.vstack(rows) if width else np.zeros((len(rows), 0), dtype=np.int64)


@dataclass
class FeederSlots:
    id: str
    boundary_bus: int
    node_ids: list[int]
    lines: list[tuple[int, int, FeederLine]]
    load_nodes: list[int]
    v: np.ndarray
    p_line: np.ndarray
    q_line: np.ndarray
    l_line: np.ndarray
    dg_p: np.ndarray
    dg_q: np.ndarray
    ess_p: np.ndarray
    ess_q: np.ndarray
    ess_loss: np.ndarray
    pv_p: np.ndarray
    pv_q: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    grid_p: np.ndarray
    grid_q: np.ndarray

    def node_pos(self, node_id: int) -> int:
        return self.node_ids.index(node_id)


@dataclass
class VariableIndex:
    """Slot arrays of shape ``(periods, k)`` holding flat variable positions.

    Transmission served-load slots cover buses with native load plus feeder
    boundary buses; at boundary buses the slot carries the feeder exchange.
    """

    n: int
    periods: int
    names: list[str]
    bus_ids: list[int]
    gen_buses: list[int]
    load_buses: list[int]
    load_is_boundary: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    gen_p: np.ndarray
    gen_q: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray
    feeders: list[FeederSlots] = field(default_factory=list)

    @property
    def per_period(self) -> int:
        return self.n // self.periods

    def bus_pos(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)

    def feeder(self, fid: str) -> FeederSlots:
        return next(f for f in self.feeders if f.id == fid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VariableIndex):
            return NotImplemented
        return self.names == other.names

    def slot_arrays(self):
        """Yield (label, array) for every slot family, feeders included."""
        for name in ("V", "theta", "gen_p", "gen_q", "load_p", "load_q"):
            yield name, getattr(self, name)
        for f in self.feeders:
            for name in ("v", "p_line", "q_line", "l_line", "dg_p", "dg_q", "ess_p", "ess_q",
                         "ess_loss", "pv_p", "pv_q", "load_p", "load_q", "grid_p", "grid_q"):
                yield f"{f.id}.{name}", getattr(f, name)


def index_variables(case: CoupledCase) -> VariableIndex:
    T = case.scenario.periods
    tn = case.transmission
    bus_ids = [b.id for b in tn.buses]
    boundary = {f.boundary_bus for f in case.feeders}
    load_buses = [b.id for b in tn.buses if b.has_load or b.id in boundary]
    gen_buses = [g.bus for g in tn.generators]

    alloc = _Allocator()
    tn_rows = {k: [] for k in ("V", "theta", "gen_p", "gen_q", "load_p", "load_q")}
    fd_rows = {f.id: {} for f in case.feeders}
    fd_meta = {}
    for f in case.feeders:
        lines = oriented_lines(f)
        fd_meta[f.id] = (lines, [n.id for n in f.nodes if n.has_load])

    for t in range(T):
        p = f"t{t + 1}"
        tn_rows["V"].append(alloc.take([f"{p}.V[{b}]" for b in bus_ids]))
        tn_rows["theta"].append(alloc.take([f"{p}.theta[{b}]" for b in bus_ids]))
        tn_rows["gen_p"].append(alloc.take([f"{p}.Pg[{g}#{k}]" for k, g in enumerate(gen_buses)]))
        tn_rows["gen_q"].append(alloc.take([f"{p}.Qg[{g}#{k}]" for k, g in enumerate(gen_buses)]))
        tn_rows["load_p"].append(alloc.take([f"{p}.Pload[{b}]" for b in load_buses]))
        tn_rows["load_q"].append(alloc.take([f"{p}.Qload[{b}]" for b in load_buses]))
        for f in case.feeders:
            lines, load_nodes = fd_meta[f.id]
            q = f"{p}.{f.id}"
            rows = fd_rows[f.id]
            lbl = [f"{a}-{b}" for a, b, _ in lines]
            spec = [
                ("v", [f"{q}.v[{n.id}]" for n in f.nodes]),
                ("p_line", [f"{q}.P[{s}]" for s in lbl]),
                ("q_line", [f"{q}.Q[{s}]" for s in lbl]),
                ("l_line", [f"{q}.l[{s}]" for s in lbl]),
                ("dg_p", [f"{q}.Pdg[{d.node}#{k}]" for k, d in enumerate(f.dgs)]),
                ("dg_q", [f"{q}.Qdg[{d.node}#{k}]" for k, d in enumerate(f.dgs)]),
                ("ess_p", [f"{q}.Pess[{e.node}#{k}]" for k, e in enumerate(f.esss)]),
                ("ess_q", [f"{q}.Qess[{e.node}#{k}]" for k, e in enumerate(f.esss)]),
                ("ess_loss", [f"{q}.Pess_loss[{e.node}#{k}]" for k, e in enumerate(f.esss)]),
                ("pv_p", [f"{q}.Ppv[{v.node}#{k}]" for k, v in enumerate(f.pvs)]),
                ("pv_q", [f"{q}.Qpv[{v.node}#{k}]" for k, v in enumerate(f.pvs)]),
                ("load_p", [f"{q}.Pload[{n}]" for n in load_nodes]),
                ("load_q", [f"{q}.Qload[{n}]" for n in load_nodes]),
                ("grid_p", [f"{q}.Pgrid"]),
                ("grid_q", [f"{q}.Qgrid"]),
            ]
            for name, labels in spec:
                rows.setdefault(name, []).append(alloc.take(labels))

    def tn_arr(k, width):
        return _stack(tn_rows[k], width)

    feeders = []
    for f in case.feeders:
        lines, load_nodes = fd_meta[f.id]
        rows = fd_rows[f.id]
        widths = {"v": len(f.nodes), "p_line": len(lines), "q_line": len(lines),
                  "l_line": len(lines), "dg_p": len(f.dgs), "dg_q": len(f.dgs),
                  "ess_p": len(f.esss), "ess_q": len(f.esss), "ess_loss": len(f.esss),
                  "pv_p": len(f.pvs), "pv_q": len(f.pvs), "load_p": len(load_nodes),
                  "load_q": len(load_nodes)}
        arrays = {k: _stack(rows[k], w) for k, w in widths.items()}
        feeders.append(FeederSlots(
            id=f.id, boundary_bus=f.boundary_bus, node_ids=[n.id for n in f.nodes],
            lines=lines, load_nodes=load_nodes,
            grid_p=_stack(rows["grid_p"], 1)[:, 0], grid_q=_stack(rows["grid_q"], 1)[:, 0],
            **arrays))

    return VariableIndex(
        n=len(alloc.names), periods=T, names=alloc.names, bus_ids=bus_ids,
        gen_buses=gen_buses, load_buses=load_buses,
        load_is_boundary=np.array([b in boundary for b in load_buses], dtype=bool),
        V=tn_arr("V", len(bus_ids)), theta=tn_arr("theta", len(bus_ids)),
        gen_p=tn_arr("gen_p", len(gen_buses)), gen_q=tn_arr("gen_q", len(gen_buses)),
        load_p=tn_arr("load_p", len(load_buses)), load_q=tn_arr("load_q", len(load_buses)),
        feeders=feeders)
