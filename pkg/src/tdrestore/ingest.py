"""Case file parsing and the bundled IEEE 14-bus / 3x IEEE 13-node instances.

Every network file is TOML. Tabular sections carry a ``columns`` list and a
``rows`` list of lists; units are part of the column names::

    [bus]
    columns = ["id", "p_load_MW", "q_load_MVAr", "v_min_pu", "v_max_pu"]
    rows = [[1, 0.0, 0.0, 0.95, 1.06], ...]

Unknown sections, keys and columns are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import networkx as nx
try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli
import tomli_w

from .netmodel import (
    CentralGenerator, CoupledCase, DgDevice, DistributionFeeder, EssDevice, FeederLine,
    FeederNode, ProfileSeries, PvDevice, ScenarioConfig, TransmissionBranch,
    TransmissionBus, TransmissionNetwork, build_case, feeder_graph, validate_case,
)

DEFAULT_LOAD_PROFILE = (0.90, 0.95, 1.00, 1.00, 0.95, 0.90)
DEFAULT_PV_PROFILE = (0.00, 0.30, 0.60, 0.80, 0.50, 0.10)

BUNDLED = {
    "case_study_1": ("ieee14_case_study_1.toml", "case_study_1.toml"),
    "case_study_2": ("ieee14_case_study_2.toml", "case_study_2.toml"),
}
BUNDLED_FEEDERS = ("d1.toml", "d2.toml", "d3.toml")


class CaseFileError(ValueError):
    """Malformed or schema-violating case file."""


class CaseValidationError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid case:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class CaseFileSet:
    transmission_path: Path
    feeder_paths: tuple[Path, ...]
    scenario_path: Path | None = None


# column name -> (field name, required, default)
_BUS_COLS = {"id": ("id", True, None), "p_load_MW": ("p_load_total", False, 0.0),
             "q_load_MVAr": ("q_load_total", False, 0.0), "v_min_pu": ("v_min", False, 0.95),
             "v_max_pu": ("v_max", False, 1.06)}
_BRANCH_COLS = {"from": ("from_bus", True, None), "to": ("to_bus", True, None),
                "r_pu": ("r", True, None), "x_pu": ("x", True, None),
                "b_pu": ("b_shunt", False, 0.0)}
_GEN_COLS = {"bus": ("bus", True, None), "p_min_MW": ("p_min", True, None),
             "p_max_MW": ("p_max", True, None), "q_min_MVAr": ("q_min", True, None),
             "q_max_MVAr": ("q_max", True, None)}
_NODE_COLS = {"id": ("id", True, None), "p_load_MW": ("p_load_total", False, 0.0),
              "q_load_MVAr": ("q_load_total", False, 0.0), "v_min_pu": ("v_min", False, 0.95),
              "v_max_pu": ("v_max", False, 1.06)}
_LINE_COLS = {"from": ("from_node", True, None), "to": ("to_node", True, None),
              "r_pu": ("r", True, None), "x_pu": ("x", True, None)}
_DG_COLS = {"node": ("node", True, None), "p_min_MW": ("p_min", True, None),
            "p_max_MW": ("p_max", True, None), "q_min_MVAr": ("q_min", True, None),
            "q_max_MVAr": ("q_max", True, None)}
_ESS_COLS = {"node": ("node", True, None), "e_surplus_MWh": ("e_surplus", False, None),
             "e_max_MWh": ("e_max", True, None), "s_max_MVA": ("s_max", True, None),
             "r_eq_pu": ("r_eq", False, 0.01), "r_cvt_pu": ("r_cvt", False, 0.01)}
_PV_COLS = {"node": ("node", True, None), "p_max_MW": ("p_max", True, None),
            "pf": ("power_factor", False, 0.9)}
_INT_FIELDS = {"id", "from_bus", "to_bus", "bus", "from_node", "to_node", "node"}

_SCENARIO_KEYS = {
    "periods": ("periods", int), "delta_t_h": ("delta_t", float), "w_t": ("w_t", float),
    "w_d": ("w_d", float), "central_gen_penalty_per_MW": ("central_gen_penalty", float),
    "critical_fraction": ("critical_fraction", float),
    "intertie_s_max_MVA": ("intertie_s_max", float), "ramp_limit_MW": ("ramp_limit", float),
}


def _load_toml(path) -> tuple[dict, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseFileError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    try:
        return tomli.loads(text), text
    except tomli.TOMLDecodeError as exc:
        raise CaseFileError(f"{path}: {exc}") from exc


def _row_line(text: str, section: str, k: int) -> int | None:
    lines = text.splitlines()
    head = re.compile(rf"^\s*\[{re.escape(section)}\]\s*(#.*)?$")
    start = next((i for i, ln in enumerate(lines) if head.match(ln)), None)
    if start is None:
        return None
    count = -1
    for i in range(start + 1, len(lines)):
        s = lines[i].lstrip()
        if re.match(r"^\[[A-Za-z_.]+\]", s):
            break
        if s.startswith("["):
            count += 1
            if count == k:
                return i + 1
    return None


def _check_keys(path, where, got, allowed):
    extra = sorted(set(got) - set(allowed))
    if extra:
        raise CaseFileError(f"{path}: unknown key(s) {extra} in {where}")


def _table(path, doc, text, section, schema, required=True) -> list[dict]:
    """Rows of a columnar section as dicts keyed by dataclass field names."""
    if section not in doc:
        if required:
            raise CaseFileError(f"{path}: missing section [{section}]")
        return []
    sec = doc[section]
    if not isinstance(sec, dict):
        raise CaseFileError(f"{path}: [{section}] must be a table")
    _check_keys(path, f"[{section}]", sec, ("columns", "rows"))
    cols = sec.get("columns")
    rows = sec.get("rows", [])
    if not isinstance(cols, list) or not all(isinstance(c, str) for c in cols):
        raise CaseFileError(f"{path}: [{section}].columns must be a list of names")
    unknown = [c for c in cols if c not in schema]
    if unknown:
        raise CaseFileError(f"{path}: unknown column(s) {unknown} in [{section}]")
    if len(set(cols)) != len(cols):
        raise CaseFileError(f"{path}: duplicate column names in [{section}]")
    missing = [c for c, (_, req, _) in schema.items() if req and c not in cols]
    if missing:
        raise CaseFileError(f"{path}: [{section}] lacks required column(s) {missing}")
    out = []
    for k, row in enumerate(rows):
        where = f"{path}: [{section}] row {k}"
        line = _row_line(text, section, k)
        if line is not None:
            where += f" (line {line})"
        if not isinstance(row, list) or len(row) != len(cols):
            raise CaseFileError(f"{where}: expected {len(cols)} values")
        rec = {}
        for c, v in zip(cols, row):
            fname = schema[c][0]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise CaseFileError(f"{where}: field {c!r} is not a number")
            if fname in _INT_FIELDS:
                if float(v) != int(v):
                    raise CaseFileError(f"{where}: field {c!r} must be an integer")
                rec[fname] = int(v)
            else:
                rec[fname] = float(v)
        for c, (fname, _, default) in schema.items():
            if fname not in rec and default is not None:
                rec[fname] = default
        out.append(rec)
    return out


def _unique(path, section, recs, key):
    seen = set()
    for r in recs:
        if r[key] in seen:
            raise CaseFileError(f"{path}: duplicate {key} {r[key]} in [{section}]")
        seen.add(r[key])
    return seen


def parse_transmission(path) -> TransmissionNetwork:
    doc, text = _load_toml(path)
    _check_keys(path, "document", doc, ("base", "bus", "branch", "gen"))
    base = doc.get("base", {})
    _check_keys(path, "[base]", base, ("s_base_MVA",))
    s_base = float(base.get("s_base_MVA", 100.0))
    buses = _table(path, doc, text, "bus", _BUS_COLS)
    if not buses:
        raise CaseFileError(f"{path}: empty bus list")
    ids = _unique(path, "bus", buses, "id")
    branches = _table(path, doc, text, "branch", _BRANCH_COLS)
    gens = _table(path, doc, text, "gen", _GEN_COLS, required=False)
    for k, br in enumerate(branches):
        for end in (br["from_bus"], br["to_bus"]):
            if end not in ids:
                raise CaseFileError(f"{path}: [branch] row {k} references unknown bus {end}")
    for k, g in enumerate(gens):
        if g["bus"] not in ids:
            raise CaseFileError(f"{path}: [gen] row {k} references unknown bus {g['bus']}")
    return TransmissionNetwork(
        buses=tuple(TransmissionBus(**b) for b in buses),
        branches=tuple(TransmissionBranch(**b) for b in branches),
        generators=tuple(CentralGenerator(**g) for g in gens),
        s_base=s_base)


def parse_feeder(path) -> DistributionFeeder:
    doc, text = _load_toml(path)
    _check_keys(path, "document", doc, ("feeder", "boundary", "node", "line", "dg", "ess", "pv"))
    meta = doc.get("feeder", {})
    _check_keys(path, "[feeder]", meta, ("id",))
    fid = str(meta.get("id", Path(path).stem.upper()))
    bnd = doc.get("boundary")
    if not isinstance(bnd, dict):
        raise CaseFileError(f"{path}: missing section [boundary]")
    _check_keys(path, "[boundary]", bnd, ("substation_node", "transmission_bus"))
    for key in ("substation_node", "transmission_bus"):
        if not isinstance(bnd.get(key), int):
            raise CaseFileError(f"{path}: [boundary].{key} must be declared as an integer")
    nodes = _table(path, doc, text, "node", _NODE_COLS)
    if not nodes:
        raise CaseFileError(f"{path}: empty node list")
    ids = _unique(path, "node", nodes, "id")
    if bnd["substation_node"] not in ids:
        raise CaseFileError(f"{path}: substation node {bnd['substation_node']} is not a node")
    lines = _table(path, doc, text, "line", _LINE_COLS, required=len(nodes) > 1)
    for k, ln in enumerate(lines):
        for end in (ln["from_node"], ln["to_node"]):
            if end not in ids:
                raise CaseFileError(f"{path}: [line] row {k} references unknown node {end}")
    devices = {}
    for sec, schema in (("dg", _DG_COLS), ("ess", _ESS_COLS), ("pv", _PV_COLS)):
        recs = _table(path, doc, text, sec, schema, required=False)
        for k, r in enumerate(recs):
            if r["node"] not in ids:
                raise CaseFileError(f"{path}: [{sec}] row {k} references unknown node {r['node']}")
        devices[sec] = recs
    for e in devices["ess"]:
        e.setdefault("e_surplus", e["e_max"])
    node_objs = []
    for n in nodes:
        vmin, vmax = n.pop("v_min"), n.pop("v_max")
        node_objs.append(FeederNode(v_sq_min=vmin**2, v_sq_max=vmax**2, **n))
    feeder = DistributionFeeder(
        id=fid, nodes=tuple(node_objs),
        lines=tuple(FeederLine(**ln) for ln in lines),
        dgs=tuple(DgDevice(**d) for d in devices["dg"]),
        esss=tuple(EssDevice(**e) for e in devices["ess"]),
        pvs=tuple(PvDevice(**p) for p in devices["pv"]),
        substation_node=bnd["substation_node"], boundary_bus=bnd["transmission_bus"])
    if not nx.is_tree(feeder_graph(feeder)):
        raise CaseFileError(f"{path}: feeder {fid} line set is not radial")
    return feeder


def _profile_values(path, where, value) -> tuple[float, ...]:
    if isinstance(value, str):
        try:
            return tuple(float(v) for v in value.split(",") if v.strip())
        except ValueError as exc:
            raise CaseFileError(f"{path}: {where}: {exc}") from exc
    if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                       for v in value):
        return tuple(float(v) for v in value)
    raise CaseFileError(f"{path}: {where} must be a list or comma-separated string")


def parse_scenario(path) -> tuple[ScenarioConfig, dict[str, ProfileSeries]]:
    """Scenario settings and profiles keyed by ``"transmission"`` and feeder id.

    ``[profiles]`` gives ``load``/``pv`` for every network; a sub-table such as
    ``[profiles.D2]`` overrides them for one feeder (``transmission`` is also
    accepted as a sub-table name).
    """
    doc, _ = _load_toml(path)
    _check_keys(path, "document", doc, ("scenario", "profiles"))
    raw = doc.get("scenario", {})
    _check_keys(path, "[scenario]", raw, _SCENARIO_KEYS)
    kwargs = {}
    for key, (fname, typ) in _SCENARIO_KEYS.items():
        if key in raw:
            v = raw[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise CaseFileError(f"{path}: [scenario].{key} is not a number")
            if typ is int and float(v) != int(v):
                raise CaseFileError(f"{path}: [scenario].{key} must be an integer")
            kwargs[fname] = typ(v)
    scenario = ScenarioConfig(**kwargs)

    prof = doc.get("profiles", {})
    default_load = DEFAULT_LOAD_PROFILE
    default_pv = DEFAULT_PV_PROFILE
    if "load" in prof:
        default_load = _profile_values(path, "[profiles].load", prof["load"])
    if "pv" in prof:
        default_pv = _profile_values(path, "[profiles].pv", prof["pv"])
    profiles = {"transmission": ProfileSeries(default_load, default_pv)}
    for key, sub in prof.items():
        if key in ("load", "pv"):
            continue
        if not isinstance(sub, dict):
            raise CaseFileError(f"{path}: unknown key {key!r} in [profiles]")
        _check_keys(path, f"[profiles.{key}]", sub, ("load", "pv"))
        profiles[key] = ProfileSeries(
            _profile_values(path, f"[profiles.{key}].load", sub["load"]) if "load" in sub
            else default_load,
            _profile_values(path, f"[profiles.{key}].pv", sub["pv"]) if "pv" in sub
            else default_pv)
    for key, series in profiles.items():
        for name, vals in (("load", series.load_profile), ("pv", series.pv_profile)):
            if len(vals) != scenario.periods:
                raise CaseFileError(f"{path}: profile {key}.{name} has {len(vals)} entries, "
                                    f"expected periods = {scenario.periods}")
    return scenario, profiles


def _fill_feeder_profiles(profiles, feeders):
    out = dict(profiles)
    for f in feeders:
        out.setdefault(f.id, out["transmission"])
    return out


def load_case(transmission_path, feeder_paths=(), scenario_path=None,
              validate: bool = True) -> CoupledCase:
    tn = parse_transmission(transmission_path)
    feeders = tuple(parse_feeder(p) for p in feeder_paths)
    if scenario_path is None:
        scenario = ScenarioConfig()
        profiles = {"transmission": ProfileSeries(DEFAULT_LOAD_PROFILE, DEFAULT_PV_PROFILE)}
    else:
        scenario, profiles = parse_scenario(scenario_path)
    case = build_case(tn, feeders, scenario, _fill_feeder_profiles(profiles, feeders))
    if validate:
        outcome = validate_case(case)
        if not outcome.ok:
            raise CaseValidationError(outcome.errors)
    return case


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("tdrestore") / "data" / name))


def bundled_files(case_id: str) -> CaseFileSet:
    if case_id not in BUNDLED:
        raise KeyError(f"unknown bundled case {case_id!r}; choose from {sorted(BUNDLED)}")
    tn, sc = BUNDLED[case_id]
    return CaseFileSet(bundled_path(tn), tuple(bundled_path(f) for f in BUNDLED_FEEDERS),
                       bundled_path(sc))


def load_bundled(case_id: str) -> CoupledCase:
    """``case_study_1`` or ``case_study_2``: IEEE 14-bus with three 13-node feeders."""
    files = bundled_files(case_id)
    return load_case(files.transmission_path, files.feeder_paths, files.scenario_path)


# -- serialization -----------------------------------------------------------

def _section(schema, records, getters=None):
    cols = list(schema)
    rows = []
    for rec in records:
        row = []
        for c in cols:
            fname = schema[c][0]
            if getters and c in getters:
                row.append(getters[c](rec))
            else:
                row.append(getattr(rec, fname))
        rows.append(row)
    return {"columns": cols, "rows": rows}


def serialize_transmission(tn: TransmissionNetwork) -> str:
    doc = {"base": {"s_base_MVA": tn.s_base},
           "bus": _section(_BUS_COLS, tn.buses),
           "branch": _section(_BRANCH_COLS, tn.branches)}
    if tn.generators:
        doc["gen"] = _section(_GEN_COLS, tn.generators)
    return tomli_w.dumps(doc)


def serialize_feeder(f: DistributionFeeder) -> str:
    doc = {"feeder": {"id": f.id},
           "boundary": {"substation_node": f.substation_node,
                        "transmission_bus": f.boundary_bus},
           "node": _section(_NODE_COLS, f.nodes, {
               "v_min_pu": lambda n: n.v_sq_min**0.5, "v_max_pu": lambda n: n.v_sq_max**0.5})}
    if f.lines:
        doc["line"] = _section(_LINE_COLS, f.lines)
    for sec, schema, recs in (("dg", _DG_COLS, f.dgs), ("ess", _ESS_COLS, f.esss),
                              ("pv", _PV_COLS, f.pvs)):
        if recs:
            doc[sec] = _section(schema, recs)
    return tomli_w.dumps(doc)


def serialize_scenario(scenario: ScenarioConfig, profiles: dict[str, ProfileSeries]) -> str:
    sc = {}
    for key, (fname, _) in _SCENARIO_KEYS.items():
        v = getattr(scenario, fname)
        if v is not None:
            sc[key] = v
    base = profiles["transmission"]
    prof = {"load": list(base.load_profile), "pv": list(base.pv_profile)}
    for key, series in profiles.items():
        if key != "transmission" and series != base:
            prof[key] = {"load": list(series.load_profile), "pv": list(series.pv_profile)}
    return tomli_w.dumps({"scenario": sc, "profiles": prof})
