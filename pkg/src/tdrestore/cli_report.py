"""Command-line frontend and report emitters.

``tdrestore solve`` assembles a case, solves it, audits the result and writes
CSV/JSON reports. Exit codes: 0 converged and audited, 1 parse or validation
error, 2 solver nonconvergence, 3 audit (or derivative check) failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formulation import RestorationProblem, assemble, extract_solution
from .ingest import BUNDLED, CaseFileError, CaseValidationError, load_bundled, load_case
from .netmodel import CoupledCase, original_bus_loads, to_per_unit
from .solution import STATE_COLUMNS, RestorationSolution, from_records, to_records
from .solver import SolverOptions, check_derivatives, default_start, random_interior_point, solve
from .verify import ValidationReport, audit_solution

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_AUDIT = 0, 1, 2, 3

BOUNDARY_HEADER = ("period", "feeder", "p_mw", "q_mvar", "v_pu")
GENERATION_HEADER = ("period", "bus", "p_mw", "q_mvar")
SERVED_HEADER = ("period", "network", "element", "p_served_mw", "p_total_mw")


@dataclass
class RestorationSchedule:
    """A solved schedule with its objective decomposition and solver/audit record.

    ``solution`` is in per unit; the emitters convert to MW/MVAr with
    ``case.scenario.system_base``. ``audit`` is ``None`` when the schedule was
    not audited (for example after nonconvergence).
    """

    case: CoupledCase                 # per unit
    solution: RestorationSolution
    objective: dict[str, float]       # unserved_term, penalty_term, total
    solver: dict = field(default_factory=dict)
    audit: ValidationReport | None = None
    name: str = ""

    def __post_init__(self):
        self.case = to_per_unit(self.case)
        if self.solution.periods != self.case.scenario.periods:
            raise ValueError("schedule horizon does not match the case")

    @property
    def periods(self) -> int:
        return self.solution.periods

    @property
    def base(self) -> float:
        return self.case.scenario.system_base

    @property
    def audited(self) -> bool:
        return self.audit is not None

    def check_period(self, period: int) -> int:
        """1-based period to 0-based index."""
        if not 1 <= int(period) <= self.periods:
            raise ValueError(f"period {period} outside 1..{self.periods}")
        return int(period) - 1

    def served_rows(self):
        """``(period, network, element, served_pu, total_pu)`` for every load point.

        Boundary buses carry no native load in the coupled model; their demand
        is reported by the feeder nodes that replace it.
        """
        sol, case = self.solution, self.case
        tprof = np.asarray(case.profile("transmission").load_profile, float)
        boundary = {f.boundary_bus for f in case.feeders}
        out = []
        for t in range(self.periods):
            for k, b in enumerate(case.transmission.buses):
                if b.id in boundary or b.p_load_total <= 0:
                    continue
                out.append((t + 1, "transmission", str(b.id), sol.served_p[t, k],
                            tprof[t] * b.p_load_total))
            for f in case.feeders:
                st = sol.feeder(f.id)
                fprof = np.asarray(case.profile(f.id).load_profile, float)
                for n in f.nodes:
                    if n.p_load_total <= 0:
                        continue
                    out.append((t + 1, f.id, str(n.id), st.served_p[t, st.node_pos(n.id)],
                                fprof[t] * n.p_load_total))
        return out

    def served_fraction(self) -> dict[str, list[float]]:
        """Served over total active load per network and period."""
        acc: dict[str, np.ndarray] = {}
        for t, net, _, served, total in self.served_rows():
            a = acc.setdefault(net, np.zeros((self.periods, 2)))
            a[t - 1] += (served, total)
        return {net: [float(s / tot) if tot > 0 else 1.0 for s, tot in a] for net, a in acc.items()}

    def unserved_energy(self) -> dict[str, float]:
        """Unserved energy in MWh for the transmission side and all feeders together."""
        dt = self.case.scenario.delta_t
        e = {"transmission": 0.0, "distribution": 0.0}
        for _, net, _, served, total in self.served_rows():
            key = "transmission" if net == "transmission" else "distribution"
            e[key] += (total - served) * dt * self.base
        return e


def build_schedule(problem: RestorationProblem, result, audit: ValidationReport | None = None,
                   name: str = "", runtime: float | None = None) -> RestorationSchedule:
    split = problem.objective.split(result.x)
    objective = {"unserved_term": split["unserved"], "penalty_term": split["penalty"],
                 "total": split["total"]}
    solver = {"status": result.status, "iterations": result.iterations,
              "kkt_residual": result.kkt_residual,
              "constraint_violation": result.constraint_violation,
              "objective": result.objective, "runtime_s": runtime, "message": result.message}
    return RestorationSchedule(problem.case, extract_solution(problem, result.x), objective,
                               solver, audit, name)


# -- tables ------------------------------------------------------------------

@dataclass
class Table:
    title: str
    columns: tuple[str, ...]
    rows: list[tuple]

    def format(self, decimals: int = 2) -> str:
        def cell(v):
            return f"{v:.{decimals}f}" if isinstance(v, float) else str(v)
        body = [[cell(v) for v in r] for r in self.rows]
        widths = [max([len(c)] + [len(r[k]) for r in body]) for k, c in enumerate(self.columns)]
        line = "  ".join(c.rjust(w) for c, w in zip(self.columns, widths))
        out = [self.title, line, "-" * len(line)]
        out += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in body]
        return "\n".join(out)

    __str__ = format


def emit_boundary_table(schedule: RestorationSchedule, period: int) -> Table:
    """Feeder exchange at the boundary buses; negative P means the feeder exports."""
    t = schedule.check_period(period)
    sol, base = schedule.solution, schedule.base
    bpos = {b: k for k, b in enumerate(sol.bus_ids)}
    rows = []
    for f in schedule.case.feeders:
        rows.append((f.id, float(sol.exchange_p[f.id][t] * base),
                     float(sol.exchange_q[f.id][t] * base), float(sol.V[t, bpos[f.boundary_bus]])))
    return Table(f"Boundary variables, period {period}",
                 ("feeder", "P (MW)", "Q (MVAr)", "V (pu)"), rows)


def emit_generation_table(schedule: RestorationSchedule, period: int) -> Table:
    """One row per central generator."""
    t = schedule.check_period(period)
    sol, base = schedule.solution, schedule.base
    rows = [(b, float(sol.gen_p[t, g] * base), float(sol.gen_q[t, g] * base))
            for g, b in enumerate(sol.gen_buses)]
    return Table(f"Transmission generation, period {period}", ("bus", "P (MW)", "Q (MVAr)"), rows)


def emit_served_table(schedule: RestorationSchedule) -> Table:
    frac = schedule.served_fraction()
    rows = [(net, *[float(100 * v) for v in vals]) for net, vals in frac.items()]
    cols = ("network", *[f"t{t + 1} (%)" for t in range(schedule.periods)])
    return Table("Served active load", cols, rows)


# -- files -------------------------------------------------------------------

def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def summary_dict(schedule: RestorationSchedule) -> dict:
    sc = schedule.case.scenario
    audit = schedule.audit
    return {
        "case": schedule.name,
        "periods": schedule.periods,
        "system_base_mva": schedule.base,
        "objective": {**schedule.objective, "w_t": sc.w_t, "w_d": sc.w_d,
                      "central_gen_penalty": sc.central_gen_penalty,
                      "unserved_energy_mwh": schedule.unserved_energy()},
        "served_fraction": schedule.served_fraction(),
        "solver": {k: (float(v) if isinstance(v, np.floating) else v)
                   for k, v in schedule.solver.items()},
        "audit": None if audit is None else audit.to_dict(),
    }


def emit_schedule_csv(schedule: RestorationSchedule, path) -> dict[str, Path]:
    """Write ``boundary.csv``, ``generation.csv``, ``served.csv``, ``state.csv``
    and ``summary.json`` into directory ``path`` (created if needed)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    sol, base = schedule.solution, schedule.base
    bpos = {b: k for k, b in enumerate(sol.bus_ids)}
    files = {k: out / f"{k}.csv" for k in ("boundary", "generation", "served", "state")}
    files["summary"] = out / "summary.json"

    rows = []
    for t in range(schedule.periods):
        for f in schedule.case.feeders:
            rows.append((t + 1, f.id, sol.exchange_p[f.id][t] * base,
                         sol.exchange_q[f.id][t] * base, sol.V[t, bpos[f.boundary_bus]]))
    _write_csv(files["boundary"], BOUNDARY_HEADER, rows)
    rows = [(t + 1, b, sol.gen_p[t, g] * base, sol.gen_q[t, g] * base)
            for t in range(schedule.periods) for g, b in enumerate(sol.gen_buses)]
    _write_csv(files["generation"], GENERATION_HEADER, rows)
    rows = [(t, net, el, s * base, tot * base) for t, net, el, s, tot in schedule.served_rows()]
    _write_csv(files["served"], SERVED_HEADER, rows)
    _write_csv(files["state"], STATE_COLUMNS, to_records(sol))
    files["summary"].write_text(json.dumps(summary_dict(schedule), indent=2))
    return files


def read_csv(path) -> list[dict]:
    """Rows of a report CSV with numeric columns converted to float/int."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k == "period":
                r[k] = int(v)
            elif k in ("p_mw", "q_mvar", "v_pu", "p_served_mw", "p_total_mw", "value"):
                r[k] = float(v)
    return rows


def read_state_csv(case: CoupledCase, path) -> RestorationSolution:
    rows = read_csv(path)
    if rows and set(rows[0]) != set(STATE_COLUMNS):
        raise ValueError(f"{path}: expected columns {','.join(STATE_COLUMNS)}")
    return from_records(to_per_unit(case), [tuple(r[c] for c in STATE_COLUMNS) for r in rows])


# -- command line ------------------------------------------------------------

def _case_from_args(args) -> tuple[CoupledCase, str]:
    if args.bundled:
        return load_bundled(args.bundled), args.bundled
    if not args.case:
        raise CaseFileError("give --bundled NAME or --case FILE")
    case = load_case(args.case, args.feeder or (), args.scenario)
    return case, Path(args.case).stem


def _options(args) -> SolverOptions:
    kw = {"seed": args.seed}
    if args.tol is not None:
        kw["kkt_tolerance"] = args.tol
    if args.max_iter is not None:
        kw["max_iterations"] = args.max_iter
    return SolverOptions(**kw)


def _print_tables(schedule: RestorationSchedule, period: int | None, stream):
    periods = [period] if period else range(1, schedule.periods + 1)
    for p in periods:
        print(emit_boundary_table(schedule, p).format(), file=stream)
        print(file=stream)
        print(emit_generation_table(schedule, p).format(), file=stream)
        print(file=stream)
    print(emit_served_table(schedule).format(), file=stream)
    o = schedule.objective
    print(f"\nobjective {o['total']:.6g} = unserved {o['unserved_term']:.6g}"
          f" + penalty {o['penalty_term']:.6g}", file=stream)


def _cmd_solve(args, stream) -> int:
    case, name = _case_from_args(args)
    problem = assemble(case, ramp_limit=args.ramp_limit)
    if args.period is not None and not 1 <= args.period <= case.scenario.periods:
        raise ValueError(f"--period {args.period} outside 1..{case.scenario.periods}")
    t0 = time.perf_counter()
    result = solve(problem.nlp, default_start(problem.nlp, problem.hints), _options(args))
    runtime = time.perf_counter() - t0
    print(f"{name}: {result.status} after {result.iterations} iterations "
          f"({runtime:.2f} s), KKT error {result.kkt_residual:.2e}", file=stream)
    audit = None
    if result.converged:
        audit = audit_solution(problem.case, extract_solution(problem, result.x),
                               kkt_residual=result.kkt_residual, kkt_threshold=args.tol or 1e-6)
    schedule = build_schedule(problem, result, audit, name, runtime)
    if args.out:
        files = emit_schedule_csv(schedule, args.out)
        print(f"reports written to {Path(args.out)} ({', '.join(p.name for p in files.values())})",
              file=stream)
    if not result.converged:
        print(f"solver did not converge: {result.message or result.status}", file=sys.stderr)
        return EXIT_NONCONVERGED
    _print_tables(schedule, args.period, stream)
    print(audit.to_text(), file=stream)
    return EXIT_OK if audit.passed else EXIT_AUDIT


def _cmd_validate(args, stream) -> int:
    case, _ = _case_from_args(args)
    src = Path(args.schedule)
    if src.is_dir():
        src = src / "state.csv"
    if not src.exists():
        raise FileNotFoundError(f"no schedule state at {src}")
    sol = read_state_csv(case, src)
    report = audit_solution(case, sol)
    print(report.to_text(), file=stream)
    return EXIT_OK if report.passed else EXIT_AUDIT


def _cmd_check_derivatives(args, stream) -> int:
    case, name = _case_from_args(args)
    problem = assemble(case, ramp_limit=args.ramp_limit)
    rng = np.random.default_rng(args.seed)
    center = default_start(problem.nlp, problem.hints)
    ok = True
    for k in range(args.points):
        x = random_interior_point(problem.nlp, rng, center=center)
        rep = check_derivatives(problem.nlp, x, hessian=not args.no_hessian, seed=args.seed + k)
        print(f"{name} point {k + 1}: {'ok' if rep.ok else 'FLAGGED'}", file=stream)
        print(rep.summary(), file=stream)
        ok &= rep.ok
    return EXIT_OK if ok else EXIT_AUDIT


def _cmd_show_case(args, stream) -> int:
    case, name = _case_from_args(args)
    tn, sc = case.transmission, case.scenario
    print(f"case {name}: {len(tn.buses)} buses, {len(tn.branches)} branches, "
          f"{len(tn.generators)} generators, base {sc.system_base:g} MVA", file=stream)
    print(f"horizon {sc.periods} x {sc.delta_t:g} h, w_t={sc.w_t:g}, w_d={sc.w_d:g}, "
          f"penalty {sc.central_gen_penalty:g}/MW, critical fraction {sc.critical_fraction:g}",
          file=stream)
    gens = Table("Generators", ("bus", "Pmin", "Pmax", "Qmin", "Qmax"),
                 [(g.bus, float(g.p_min), float(g.p_max), float(g.q_min), float(g.q_max))
                  for g in tn.generators])
    print(gens.format(), file=stream)
    replaced = original_bus_loads(case)
    rows = []
    for f in case.feeders:
        p = sum(n.p_load_total for n in f.nodes)
        q = sum(n.q_load_total for n in f.nodes)
        orig = replaced.get(f.boundary_bus, (float("nan"), float("nan")))
        rows.append((f.id, f.boundary_bus, len(f.nodes), len(f.dgs), len(f.esss), len(f.pvs),
                     float(p), float(q), float(orig[0]), float(orig[1])))
    print(Table("Feeders", ("feeder", "bus", "nodes", "DG", "ESS", "PV", "P (MW)", "Q (MVAr)",
                            "bus P (MW)", "bus Q (MVAr)"), rows).format(), file=stream)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tdrestore",
                                 description="Coupled transmission/distribution load restoration")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def case_args(p):
        g = p.add_argument_group("case")
        g.add_argument("--bundled", choices=sorted(BUNDLED))
        g.add_argument("--case", help="transmission TOML")
        g.add_argument("--feeder", action="append", help="feeder TOML (repeatable)")
        g.add_argument("--scenario", help="scenario TOML")
        g.add_argument("--ramp-limit", type=float, default=None,
                       help="central generation ramp limit, MW per period")
        g.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("solve", help="solve, audit and report a case")
    case_args(p)
    p.add_argument("--out", help="directory for CSV/JSON reports")
    p.add_argument("--period", type=int, default=None, help="print tables for one period only")
    p.add_argument("--tol", type=float, default=None, help="KKT tolerance (default 1e-6)")
    p.add_argument("--max-iter", type=int, default=None)

    p = sub.add_parser("validate", help="audit a schedule written by solve")
    case_args(p)
    p.add_argument("schedule", help="report directory or state.csv")

    p = sub.add_parser("check-derivatives", help="finite-difference check of the assembled model")
    case_args(p)
    p.add_argument("--points", type=int, default=1)
    p.add_argument("--no-hessian", action="store_true")

    p = sub.add_parser("show-case", help="print a parsed case summary")
    case_args(p)
    return ap


_COMMANDS = {"solve": _cmd_solve, "validate": _cmd_validate,
             "check-derivatives": _cmd_check_derivatives, "show-case": _cmd_show_case}


def run_case(argv=None, stream=None) -> int:
    """Run one CLI invocation and return its exit code."""
    stream = stream or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:   # argparse usage errors
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args, stream)
    except (CaseFileError, CaseValidationError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main(argv=None) -> None:
    sys.exit(run_case(argv))


if __name__ == "__main__":
    main()
