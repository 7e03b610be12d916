"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import dataclasses
import math
import time

import numpy as np
import pytest

from helpers import interior_point
from tdrestore.cli_report import build_schedule
from tdrestore.formulation import assemble, extract_solution
from tdrestore.ingest import load_bundled
from tdrestore.netmodel import original_bus_loads, to_per_unit
from tdrestore.nlp import dense_problem
from tdrestore.solver import SolverOptions, check_derivatives, default_start, solve
from tdrestore.verify import AUDIT_THRESHOLD, audit_solution

PU_TOL = 1e-6

TN_LOADS = {  # bus: (MW, MVAr), boundary buses carry their feeder's aggregate
    1: (0, 0), 2: (21.70, 12.70), 3: (94.20, 19), 4: (47.80, -3.90), 5: (10.398, 5.0448),
    6: (11.20, 7.50), 7: (0, 0), 8: (0, 0), 9: (34.66, 16.816), 10: (9, 5.80),
    11: (3.50, 1.80), 12: (6.10, 1.60), 13: (13.50, 5.80), 14: (17.33, 8.408),
}
DN_P = {
    "D1": (0.51, 0.30, 0, 1.20, 0.51, 0.69, 0, 0.384, 3.765, 2.529, 0, 0, 0.51),
    "D2": (1.70, 1.00, 0, 4.0, 1.70, 2.30, 0, 1.28, 12.55, 8.43, 0, 0, 1.70),
    "D3": (0.85, 0.50, 0, 2.00, 0.85, 1.15, 0, 0.64, 6.275, 4.215, 0, 0, 0.85),
}
DN_Q = {
    "D1": (0.1920, 0.1392, 0, 0.6960, 0.3000, 0.3168, 0, 0.2064, 1.7232, 1.1088, 0, 0, 0.3624),
    "D2": (0.64, 0.464, 0, 2.32, 1.00, 1.056, 0, 0.688, 5.744, 3.696, 0, 0, 1.208),
    "D3": (0.32, 0.232, 0, 1.16, 0.50, 0.528, 0, 0.344, 2.872, 1.848, 0, 0, 0.604),
}
DERS = {  # feeder: (boundary bus, DG MW/MVAr, ESS MWh/MVA)
    "D1": (5, (4.0, 3.2), (50.0, 25.0)),
    "D2": (9, (1.0, 0.8), (12.5, 6.25)),
    "D3": (14, (14.0, 9.0), (50.0, 25.0)),
}
GENS = {  # bus: (P max, P min, Q max, Q min)
    "case_study_1": {1: (332.4, 0, 10, 0), 2: (140, 0, 50, -40), 3: (0, 0, 40, 0),
                     6: (0, 0, 24, -6), 8: (0, 0, 24, -6)},
    "case_study_2": {1: (114.62, 0, 5.26, 0), 2: (48.28, 0, 26.32, -40), 3: (0, 0, 21.05, 0),
                     6: (0, 0, 12.63, -6), 8: (0, 0, 12.63, -6)},
}
FEEDER_SUMS = {"D1": (10.398, 5.0448), "D2": (34.66, 16.816), "D3": (17.33, 8.408)}


def verdict(capsys, number, title, failures, detail=""):
    """Print the criterion line unconditionally, then fail the test if needed."""
    status = "PASS" if not failures else "FAIL"
    with capsys.disabled():
        print(f"\n[acceptance {number}] {status}: {title}" + (f" ({detail})" if detail else ""))
        for f in failures[:10]:
            print(f"    - {f}")
    assert not failures, "; ".join(failures[:10])


def critical_and_served(case, sol):
    """``(label, served, critical, total)`` in per unit for every P and Q load slot."""
    boundary = {f.boundary_bus for f in case.feeders}
    prof = case.profile("transmission").load_profile
    out = []
    for t in range(case.scenario.periods):
        for k, b in enumerate(case.transmission.buses):
            if b.id in boundary or not (b.p_load_total or b.q_load_total):
                continue
            out.append((f"t{t + 1} bus {b.id} P", sol.served_p[t, k], prof[t] * b.p_load_critical,
                        prof[t] * b.p_load_total))
            out.append((f"t{t + 1} bus {b.id} Q", sol.served_q[t, k], prof[t] * b.q_load_critical,
                        prof[t] * b.q_load_total))
        for f in case.feeders:
            st = sol.feeder(f.id)
            fprof = case.profile(f.id).load_profile
            for n in f.nodes:
                if not n.has_load:
                    continue
                j = st.node_pos(n.id)
                out.append((f"t{t + 1} {f.id} node {n.id} P", st.served_p[t, j],
                            fprof[t] * n.p_load_critical, fprof[t] * n.p_load_total))
                out.append((f"t{t + 1} {f.id} node {n.id} Q", st.served_q[t, j],
                            fprof[t] * n.q_load_critical, fprof[t] * n.q_load_total))
    return out


def exchange_signs(sol, period=3):
    p = {fid: float(v[period - 1]) for fid, v in sol.exchange_p.items()}
    bad = []
    for fid, sign in (("D1", -1), ("D2", 1), ("D3", -1)):
        if not p[fid] * sign > 0:
            bad.append(f"{fid} exchange {p[fid] * 100:.3f} MW has the wrong sign")
    return bad, p


# -- 1 -----------------------------------------------------------------------

def test_criterion_1_data_fidelity(capsys):
    t0 = time.perf_counter()
    bad = []
    for name, gens in GENS.items():
        case = load_bundled(name)
        got = {g.bus: (g.p_max, g.p_min, g.q_max, g.q_min) for g in case.transmission.generators}
        if got != gens:
            bad.append(f"{name} generator limits {got}")
        loads = original_bus_loads(case)
        for bus, pq in TN_LOADS.items():
            if not np.allclose(loads[bus], pq, rtol=1e-15, atol=1e-13):
                bad.append(f"{name} bus {bus} load {loads[bus]} != {pq}")
        for f in case.feeders:
            bus, dg, ess = DERS[f.id]
            if f.boundary_bus != bus:
                bad.append(f"{f.id} attached to bus {f.boundary_bus}")
            if [(d.node, d.p_max, d.q_max) for d in f.dgs] != [(1, *dg), (8, *dg)]:
                bad.append(f"{f.id} DG data")
            if [(e.node, e.e_max, e.s_max) for e in f.esss] != [(3, *ess)]:
                bad.append(f"{f.id} ESS data")
            if [(p.node, p.p_max) for p in f.pvs] != [(11, 3.0)]:
                bad.append(f"{f.id} PV data")
            nodes = {n.id: n for n in f.nodes}
            for k in range(13):
                n = nodes[k + 1]
                if (n.p_load_total, n.q_load_total) != (DN_P[f.id][k], DN_Q[f.id][k]):
                    bad.append(f"{f.id} node {k + 1} load")
            p, q = f.total_load()
            sp, sq = FEEDER_SUMS[f.id]
            if abs(p - sp) > 4 * np.finfo(float).eps * sp or abs(q - sq) > 4 * np.finfo(float).eps * sq:
                bad.append(f"{f.id} load sum {p!r}/{q!r} != {sp}/{sq}")
    elapsed = time.perf_counter() - t0
    if elapsed >= 1.0:
        bad.append(f"runtime {elapsed:.2f} s >= 1 s")
    verdict(capsys, 1, "data fidelity", bad, f"{elapsed:.3f} s")


# -- 2 -----------------------------------------------------------------------

def test_criterion_2_case_study_1_structure(capsys, cs1):
    bad = []
    if not cs1.result.converged:
        bad.append(f"solver status {cs1.result.status}")
    case = cs1.problem.case
    sol = cs1.solution
    # picked-up load is active power; served Q is a bounded reactive-support variable
    for label, served, crit, total in critical_and_served(case, sol):
        lo, hi = min(crit, total), max(crit, total)
        if served < lo - PU_TOL or served > hi + PU_TOL:
            bad.append(f"{label}: served {served:.6f} outside [{lo:.6f}, {hi:.6f}] pu")
        elif label.endswith(" P") and served - crit > 1e-3:
            bad.append(f"{label}: served {served:.6f} vs floor {crit:.6f} pu")
    frac = build_schedule(cs1.problem, cs1.result).served_fraction()
    for net, per in frac.items():
        if any(abs(f - 0.5) > 1e-3 for f in per):
            bad.append(f"{net} served fraction {per}")
    signs, p = exchange_signs(sol)
    bad += signs
    for k, bus in enumerate(sol.gen_buses):
        if bus in (3, 6, 8) and np.abs(sol.gen_p[:, k]).max() > PU_TOL:
            bad.append(f"generator at bus {bus} produces {np.abs(sol.gen_p[:, k]).max() * 100:.4f} MW")
    if cs1.runtime >= 120:
        bad.append(f"runtime {cs1.runtime:.1f} s >= 120 s")
    detail = (f"t3 exchange " + ", ".join(f"{k} {v * 100:+.2f} MW" for k, v in p.items())
              + f"; {cs1.result.iterations} iterations, {cs1.runtime:.2f} s")
    verdict(capsys, 2, "case study I structure", bad, detail)


# -- 3 -----------------------------------------------------------------------

def test_criterion_3_case_study_2_structure(capsys, cs2):
    bad = []
    if not cs2.result.converged:
        bad.append(f"solver status {cs2.result.status}")
    sol = cs2.solution
    k2 = sol.gen_buses.index(2)
    dev = np.abs(sol.gen_p[:, k2] - 0.4828).max()
    if dev > 1e-4:
        bad.append(f"bus-2 generation {sol.gen_p[:, k2] * 100} MW not at 48.28 (dev {dev:.2e} pu)")
    # the unserved term must equal 2 x TN plus 1 x DN unserved energy, counted from the state
    sched = build_schedule(cs2.problem, cs2.result)
    e = sched.unserved_energy()
    sc = cs2.problem.case.scenario
    if sc.w_t != 2.0 or sc.w_d != 1.0:
        bad.append(f"weights {sc.w_t}/{sc.w_d}")
    expected = 2.0 * e["transmission"] + 1.0 * e["distribution"]
    term = sched.objective["unserved_term"]
    if not math.isclose(term, expected, rel_tol=1e-9):
        bad.append(f"unserved term {term} != 2 x {e['transmission']} + {e['distribution']}")
    signs, p = exchange_signs(sol)
    bad += signs
    detail = (f"bus-2 {sol.gen_p[:, k2].min() * 100:.4f}..{sol.gen_p[:, k2].max() * 100:.4f} MW; "
              f"term {term:.3f} = 2 x {e['transmission']:.3f} + {e['distribution']:.3f} MWh")
    verdict(capsys, 3, "case study II structure", bad, detail)


# -- 4 and 5 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def audits(cs1, cs2):
    return {name: audit_solution(s.problem.case, s.solution, s.result.kkt_residual)
            for name, s in (("case_study_1", cs1), ("case_study_2", cs2))}


def test_criterion_4_physics_audit(capsys, audits):
    bad = []
    for name, rep in audits.items():
        if rep.threshold != AUDIT_THRESHOLD or AUDIT_THRESHOLD > 1e-6:
            bad.append(f"{name} audited at {rep.threshold}")
        if not rep.passed:
            bad += [f"{name} {f}" for f in rep.failures]
    worst = max(max(r.max_tn_balance_residual, r.max_dn_balance_residual, r.max_bound_violation,
                    r.max_boundary_mismatch, r.max_ess_violation) for r in audits.values())
    verdict(capsys, 4, "physics audit", bad, f"worst residual {worst:.2e} pu")


def test_criterion_5_oracle_equivalence(capsys, audits):
    bad = []
    for name, rep in audits.items():
        if not rep.oracle_voltage_deviation < 1e-6:
            bad.append(f"{name} oracle voltage deviation {rep.oracle_voltage_deviation:.2e}")
        if not rep.oracle_flow_deviation < 1e-6:
            bad.append(f"{name} oracle flow deviation {rep.oracle_flow_deviation:.2e}")
    worst = max(max(r.oracle_voltage_deviation, r.oracle_flow_deviation) for r in audits.values())
    verdict(capsys, 5, "oracle equivalence", bad, f"worst deviation {worst:.2e} pu")


# -- 6 -----------------------------------------------------------------------

def test_criterion_6_derivatives(capsys):
    t0 = time.perf_counter()
    problem = assemble(load_bundled("case_study_1"))
    bad, worst = [], {}
    for seed in range(5):
        rep = check_derivatives(problem.nlp, interior_point(problem, seed), step=1e-6,
                                hessian=False, seed=seed)
        for block, err in rep.max_error.items():
            worst[block] = max(worst.get(block, 0.0), err)
        bad += [f"point {seed} {e.block} [{e.row}, {e.column}] err {e.error:.2e}"
                for e in rep.flagged]
    if max(worst.values()) >= 1e-5:
        bad.append(f"max relative error {max(worst.values()):.2e}")
    elapsed = time.perf_counter() - t0
    if elapsed >= 60:
        bad.append(f"runtime {elapsed:.1f} s >= 60 s")
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s"
    verdict(capsys, 6, "derivative correctness", bad, detail)


# -- 7 -----------------------------------------------------------------------

def test_criterion_7_solver_suite(capsys):
    tight = SolverOptions(kkt_tolerance=1e-10)
    bad = []
    quad = dense_problem(1, lambda x: (x[0] - 3) ** 2, lambda x: np.array([2 * (x[0] - 3)]),
                         lambda x: np.array([[2.0]]), lower=[0.0], upper=[10.0])
    r = solve(quad, [9.0], tight)
    if not (r.converged and abs(r.x[0] - 3) <= 1e-8 and abs(r.objective) <= 1e-8):
        bad.append(f"box quadratic: {r.status} x={r.x}")

    def circle(sign):
        return dense_problem(
            2, lambda x: sign * (x[0] + x[1]), lambda x: np.array([sign, sign]),
            lambda x: np.zeros((2, 2)), lower=[0.0, 0.0],
            eq=lambda x: [x[0] ** 2 + x[1] ** 2 - 2], eq_jac=lambda x: [[2 * x[0], 2 * x[1]]],
            eq_hess=lambda x, lam: 2 * lam[0] * np.eye(2), m_eq=1)

    # (1, 1) is the stationary point of x1 + x2 on the arc, and its maximum
    r = solve(circle(-1.0), [0.5, 1.5], tight)
    if not (r.converged and np.abs(r.x - 1.0).max() <= 1e-8):
        bad.append(f"circle, stationary point (1, 1): {r.status} x={r.x}")
    # the minimum sits on an axis
    r = solve(circle(1.0), [0.5, 1.5], tight)
    if not (r.converged and np.abs(np.sort(r.x) - [0.0, math.sqrt(2)]).max() <= 1e-8):
        bad.append(f"circle, minimum (0, sqrt 2): {r.status} x={r.x}")

    opts = SolverOptions(seed=3, start_perturbation=0.01)
    runs = [solve(circle(-1.0), [0.3, 1.1], opts) for _ in range(2)]
    if runs[0].iterate_hashes != runs[1].iterate_hashes or len(runs[0].iterate_hashes) < 2:
        bad.append("iterate hashes differ between identical runs")
    problem = assemble(load_bundled("case_study_1"))
    x0 = default_start(problem.nlp, problem.hints)
    big = [solve(problem.nlp, x0, SolverOptions(max_iterations=5)) for _ in range(2)]
    if big[0].iterate_hashes != big[1].iterate_hashes:
        bad.append("case study I iterate hashes differ between identical runs")
    verdict(capsys, 7, "solver unit suite", bad, f"{len(runs[0].iterate_hashes)} identical hashes")


# -- 8 -----------------------------------------------------------------------

def test_criterion_8_penalty_semantics(capsys, cs1):
    bad = []
    base = load_bundled("case_study_1")
    case = dataclasses.replace(base, scenario=dataclasses.replace(base.scenario,
                                                                  central_gen_penalty=0.0))
    problem = assemble(case)
    res = solve(problem.nlp, default_start(problem.nlp, problem.hints),
                SolverOptions(kkt_tolerance=1e-10))
    if not res.converged:
        bad.append(f"penalty 0: solver status {res.status}")
    term = problem.objective.split(res.x)["unserved"]
    # an interior point stays a barrier-sized distance inside each served-load bound
    if term > 1e-6:
        bad.append(f"penalty 0: unserved term {term:.3e} MWh")
    sol = extract_solution(problem, res.x)
    pu = to_per_unit(case)
    for label, served, _, total in critical_and_served(pu, sol):
        if label.endswith(" P") and total - served > PU_TOL:
            bad.append(f"penalty 0: {label} served {served:.6f} of {total:.6f} pu")
    rep = audit_solution(problem.case, sol, res.kkt_residual)
    if not rep.passed:
        bad += [f"penalty 0 audit {f}" for f in rep.failures]
    # with the 1e7 penalty every load sits on its critical floor
    for label, served, crit, _ in critical_and_served(cs1.problem.case, cs1.solution):
        if label.endswith(" P") and served - crit > 1e-3:
            bad.append(f"penalty 1e7: {label} served {served:.6f} above floor {crit:.6f} pu")
    penalised = cs1.problem.objective.split(cs1.result.x)["unserved"]
    detail = f"unserved term {term:.2e} MWh at penalty 0, {penalised:.2f} MWh at 1e7"
    verdict(capsys, 8, "penalty semantics", bad, detail)
