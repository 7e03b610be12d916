"""Data model for a transmission network coupled with radial distribution feeders.

All records are frozen dataclasses. Power quantities are in MW/MVAr and
energies in MWh until :func:`to_per_unit` is applied; impedances are always
per unit. Critical loads are derived from totals by :func:`build_case`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

PROFILE_MAX = 1.2


@dataclass(frozen=True)
class TransmissionBus:
    id: int
    p_load_total: float = 0.0
    q_load_total: float = 0.0
    p_load_critical: float = 0.0
    q_load_critical: float = 0.0
    v_min: float = 0.95
    v_max: float = 1.06

    @property
    def has_load(self) -> bool:
        return self.p_load_total != 0.0 or self.q_load_total != 0.0


@dataclass(frozen=True)
class TransmissionBranch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0


@dataclass(frozen=True)
class CentralGenerator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float


@dataclass(frozen=True)
class TransmissionNetwork:
    buses: tuple[TransmissionBus, ...]
    branches: tuple[TransmissionBranch, ...]
    generators: tuple[CentralGenerator, ...]
    s_base: float = 100.0

    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]


@dataclass(frozen=True)
class FeederNode:
    id: int
    p_load_total: float = 0.0
    q_load_total: float = 0.0
    p_load_critical: float = 0.0
    q_load_critical: float = 0.0
    v_sq_min: float = 0.95**2
    v_sq_max: float = 1.06**2

    @property
    def has_load(self) -> bool:
        return self.p_load_total != 0.0 or self.q_load_total != 0.0


@dataclass(frozen=True)
class FeederLine:
    from_node: int
    to_node: int
    r: float
    x: float


@dataclass(frozen=True)
class DgDevice:
    node: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float


@dataclass(frozen=True)
class EssDevice:
    node: int
    e_surplus: float
    e_max: float
    s_max: float
    r_eq: float = 0.01
    r_cvt: float = 0.01


@dataclass(frozen=True)
class PvDevice:
    node: int
    p_max: float
    power_factor: float = 0.9


@dataclass(frozen=True)
class DistributionFeeder:
    id: str
    nodes: tuple[FeederNode, ...]
    lines: tuple[FeederLine, ...]
    dgs: tuple[DgDevice, ...] = ()
    esss: tuple[EssDevice, ...] = ()
    pvs: tuple[PvDevice, ...] = ()
    substation_node: int = 1
    boundary_bus: int = 1

    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def total_load(self) -> tuple[float, float]:
        return (sum(n.p_load_total for n in self.nodes),
                sum(n.q_load_total for n in self.nodes))


@dataclass(frozen=True)
class ProfileSeries:
    load_profile: tuple[float, ...]
    pv_profile: tuple[float, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    periods: int = 6
    delta_t: float = 1.0
    w_t: float = 1.0
    w_d: float = 1.0
    central_gen_penalty: float = 1e7
    critical_fraction: float = 0.5
    intertie_s_max: float = 100.0
    system_base: float = 100.0
    ramp_limit: float | None = None


@dataclass(frozen=True)
class CoupledCase:
    """Transmission network, attached feeders, profiles and scenario.

    ``profiles`` maps ``"transmission"`` and each feeder id to its series.
    """

    transmission: TransmissionNetwork
    feeders: tuple[DistributionFeeder, ...]
    profiles: dict[str, ProfileSeries]
    scenario: ScenarioConfig
    per_unit: bool = False

    def feeder(self, fid: str) -> DistributionFeeder:
        for f in self.feeders:
            if f.id == fid:
                return f
        raise KeyError(fid)

    def profile(self, key: str) -> ProfileSeries:
        return self.profiles.get(key, self.profiles["transmission"])


@dataclass
class ValidationOutcome:
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok


def _with_critical(item, fraction: float):
    return dataclasses.replace(item, p_load_critical=fraction * item.p_load_total,
                               q_load_critical=fraction * item.q_load_total)


def build_case(transmission: TransmissionNetwork, feeders, scenario: ScenarioConfig,
               profiles: dict[str, ProfileSeries]) -> CoupledCase:
    """Assemble a physical-unit case, deriving critical loads from totals."""
    frac = scenario.critical_fraction
    tn = dataclasses.replace(
        transmission, buses=tuple(_with_critical(b, frac) for b in transmission.buses))
    fds = tuple(
        dataclasses.replace(f, nodes=tuple(_with_critical(n, frac) for n in f.nodes))
        for f in feeders)
    if scenario.system_base != transmission.s_base:
        scenario = dataclasses.replace(scenario, system_base=transmission.s_base)
    return CoupledCase(tn, fds, dict(profiles), scenario)


def feeder_graph(feeder: DistributionFeeder) -> nx.MultiGraph:
    g = nx.MultiGraph()
    g.add_nodes_from(feeder.node_ids())
    for k, ln in enumerate(feeder.lines):
        g.add_edge(ln.from_node, ln.to_node, key=k)
    return g


def oriented_lines(feeder: DistributionFeeder) -> list[tuple[int, int, FeederLine]]:
    """Lines as (parent, child, line), ordered breadth-first from the substation."""
    g = nx.Graph()
    for ln in feeder.lines:
        g.add_edge(ln.from_node, ln.to_node, line=ln)
    out = []
    for parent, child in nx.bfs_edges(g, feeder.substation_node):
        out.append((parent, child, g.edges[parent, child]["line"]))
    return out


def original_bus_loads(case: CoupledCase) -> dict[int, tuple[float, float]]:
    """Transmission bus loads with each feeder's aggregate load put back on its bus."""
    loads = {b.id: (b.p_load_total, b.q_load_total) for b in case.transmission.buses}
    for f in case.feeders:
        p, q = f.total_load()
        bp, bq = loads[f.boundary_bus]
        loads[f.boundary_bus] = (bp + p, bq + q)
    return loads


def _check_load(path, item, frac, errors, tol=1e-9):
    for kind in ("p", "q"):
        tot = getattr(item, f"{kind}_load_total")
        crit = getattr(item, f"{kind}_load_critical")
        if not (math.isfinite(tot) and math.isfinite(crit)):
            errors.append(f"{path}: non-finite {kind} load")
            continue
        lo, hi = min(0.0, tot), max(0.0, tot)
        slack = tol * abs(tot)  # relative, so the verdict does not depend on the base
        if crit < lo - slack or crit > hi + slack:
            errors.append(f"{path}: critical {kind} load {crit:g} outside [0, {tot:g}]")
        elif abs(crit - frac * tot) > slack:
            errors.append(f"{path}: critical {kind} load {crit:g} != "
                          f"{frac:g} x total {tot:g}")


def _check_scenario(sc: ScenarioConfig, errors):
    if sc.periods < 1:
        errors.append(f"scenario.periods: {sc.periods} < 1")
    if not sc.delta_t > 0:
        errors.append(f"scenario.delta_t: {sc.delta_t} must be positive")
    if not (sc.w_t > 0 and sc.w_d > 0):
        errors.append("scenario: load weights must be positive")
    if sc.central_gen_penalty < 0:
        errors.append("scenario.central_gen_penalty: negative")
    if not 0.0 <= sc.critical_fraction <= 1.0:
        errors.append(f"scenario.critical_fraction: {sc.critical_fraction} not in [0, 1]")
    if not sc.intertie_s_max > 0:
        errors.append("scenario.intertie_s_max: must be positive")
    if not sc.system_base > 0:
        errors.append("scenario.system_base: must be positive")
    if sc.ramp_limit is not None and not sc.ramp_limit > 0:
        errors.append("scenario.ramp_limit: must be positive when set")


def _check_profile(path, series, periods, errors):
    arr = np.asarray(series, dtype=float)
    if len(arr) != periods:
        errors.append(f"{path}: length {len(arr)} != periods {periods}")
    if not np.all(np.isfinite(arr)):
        errors.append(f"{path}: non-finite entries")
    elif np.any(arr < 0) or np.any(arr > PROFILE_MAX):
        errors.append(f"{path}: entries outside [0, {PROFILE_MAX}]")


def _check_transmission(tn: TransmissionNetwork, frac, errors):
    ids = tn.bus_ids()
    if not ids:
        errors.append("transmission.buses: empty bus list")
    seen = set()
    for k, b in enumerate(tn.buses):
        path = f"transmission.buses[{b.id}]"
        if b.id in seen:
            errors.append(f"{path}: duplicate bus id")
        seen.add(b.id)
        if not b.v_min > 0:
            errors.append(f"{path}: v_min {b.v_min} must be positive")
        if not b.v_min < b.v_max:
            errors.append(f"{path}: v_min {b.v_min} >= v_max {b.v_max}")
        _check_load(path, b, frac, errors)
    g = nx.Graph()
    g.add_nodes_from(ids)
    for k, br in enumerate(tn.branches):
        path = f"transmission.branches[{k}]"
        if br.from_bus == br.to_bus:
            errors.append(f"{path}: from_bus == to_bus ({br.from_bus})")
        if br.x == 0:
            errors.append(f"{path}: zero reactance")
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                errors.append(f"{path}: dangling reference to bus {end}")
        g.add_edge(br.from_bus, br.to_bus)
    if ids and not nx.is_connected(g):
        errors.append("transmission: network is not connected")
    for k, gen in enumerate(tn.generators):
        path = f"transmission.generators[{k}]"
        if gen.bus not in seen:
            errors.append(f"{path}: dangling reference to bus {gen.bus}")
        if gen.p_min > gen.p_max:
            errors.append(f"{path}: p_min {gen.p_min} > p_max {gen.p_max}")
        if gen.q_min > gen.q_max:
            errors.append(f"{path}: q_min {gen.q_min} > q_max {gen.q_max}")
    if not tn.s_base > 0:
        errors.append("transmission.s_base: must be positive")


def _check_feeder(f: DistributionFeeder, frac, errors):
    root = f"feeders[{f.id}]"
    ids = set()
    for n in f.nodes:
        path = f"{root}.nodes[{n.id}]"
        if n.id in ids:
            errors.append(f"{path}: duplicate node id")
        ids.add(n.id)
        if not n.v_sq_min > 0:
            errors.append(f"{path}: v_sq_min must be positive")
        if not n.v_sq_min < n.v_sq_max:
            errors.append(f"{path}: v_sq_min >= v_sq_max")
        _check_load(path, n, frac, errors)
    if f.substation_node not in ids:
        errors.append(f"{root}: substation node {f.substation_node} does not exist")
    dangling = False
    for k, ln in enumerate(f.lines):
        path = f"{root}.lines[{k}]"
        if ln.from_node == ln.to_node:
            errors.append(f"{path}: from_node == to_node")
        for end in (ln.from_node, ln.to_node):
            if end not in ids:
                errors.append(f"{path}: dangling reference to node {end}")
                dangling = True
    if ids and not dangling and not nx.is_tree(feeder_graph(f)):
        errors.append(f"{root}: line set is not radial (must form a tree over all nodes)")
    for k, d in enumerate(f.dgs):
        path = f"{root}.dgs[{k}]"
        if d.node not in ids:
            errors.append(f"{path}: node {d.node} does not exist")
        if d.p_min > d.p_max:
            errors.append(f"{path}: p_min > p_max")
        if d.q_min > d.q_max:
            errors.append(f"{path}: q_min > q_max")
    for k, e in enumerate(f.esss):
        path = f"{root}.esss[{k}]"
        if e.node not in ids:
            errors.append(f"{path}: node {e.node} does not exist")
        if not 0 <= e.e_surplus <= e.e_max:
            errors.append(f"{path}: e_surplus {e.e_surplus:g} not in [0, e_max={e.e_max:g}]")
        if not e.s_max > 0:
            errors.append(f"{path}: s_max must be positive")
        if e.r_eq < 0 or e.r_cvt < 0:
            errors.append(f"{path}: negative equivalent resistance")
    for k, pv in enumerate(f.pvs):
        path = f"{root}.pvs[{k}]"
        if pv.node not in ids:
            errors.append(f"{path}: node {pv.node} does not exist")
        if pv.p_max < 0:
            errors.append(f"{path}: p_max negative")
        if not 0 < pv.power_factor <= 1:
            errors.append(f"{path}: power_factor {pv.power_factor} not in (0, 1]")


def validate_case(case: CoupledCase) -> ValidationOutcome:
    """Check every structural invariant; all violations are collected."""
    errors: list[str] = []
    sc = case.scenario
    frac = sc.critical_fraction
    _check_scenario(sc, errors)
    _check_transmission(case.transmission, frac, errors)
    buses = {b.id: b for b in case.transmission.buses}
    fids = set()
    boundary = set()
    for f in case.feeders:
        if f.id in fids:
            errors.append(f"feeders[{f.id}]: duplicate feeder id")
        fids.add(f.id)
        _check_feeder(f, frac, errors)
        b = buses.get(f.boundary_bus)
        if b is None:
            errors.append(f"feeders[{f.id}]: boundary bus {f.boundary_bus} does not exist")
        else:
            if f.boundary_bus in boundary:
                errors.append(f"feeders[{f.id}]: boundary bus {f.boundary_bus} "
                              "already hosts another feeder")
            if b.has_load:
                errors.append(f"transmission.buses[{b.id}]: native load must be zero "
                              f"where feeder {f.id} is attached")
        boundary.add(f.boundary_bus)
    if "transmission" not in case.profiles:
        errors.append("profiles: missing transmission profile")
    for key, series in case.profiles.items():
        if key != "transmission" and key not in fids:
            errors.append(f"profiles[{key}]: no such feeder")
        _check_profile(f"profiles[{key}].load", series.load_profile, sc.periods, errors)
        _check_profile(f"profiles[{key}].pv", series.pv_profile, sc.periods, errors)
    return ValidationOutcome(errors)


def _scale_power(item, base, names):
    return dataclasses.replace(item, **{n: getattr(item, n) / base for n in names})


_LOAD_FIELDS = ("p_load_total", "q_load_total", "p_load_critical", "q_load_critical")


def to_per_unit(case: CoupledCase) -> CoupledCase:
    """Divide powers by the system base and energies by base x 1 h.

    Returns the case unchanged when it is already in per unit.
    """
    if case.per_unit:
        return case
    base = case.scenario.system_base
    if not base > 0:
        raise ValueError(f"system_base must be positive, got {base}")
    tn = case.transmission
    tn = dataclasses.replace(
        tn,
        buses=tuple(_scale_power(b, base, _LOAD_FIELDS) for b in tn.buses),
        generators=tuple(_scale_power(g, base, ("p_min", "p_max", "q_min", "q_max"))
                         for g in tn.generators))
    feeders = []
    for f in case.feeders:
        feeders.append(dataclasses.replace(
            f,
            nodes=tuple(_scale_power(n, base, _LOAD_FIELDS) for n in f.nodes),
            dgs=tuple(_scale_power(d, base, ("p_min", "p_max", "q_min", "q_max"))
                      for d in f.dgs),
            esss=tuple(_scale_power(e, base, ("e_surplus", "e_max", "s_max"))
                       for e in f.esss),
            pvs=tuple(_scale_power(p, base, ("p_max",)) for p in f.pvs)))
    sc = case.scenario
    sc = dataclasses.replace(
        sc, intertie_s_max=sc.intertie_s_max / base,
        ramp_limit=None if sc.ramp_limit is None else sc.ramp_limit / base)
    return dataclasses.replace(case, transmission=tn, feeders=tuple(feeders),
                               scenario=sc, per_unit=True)
