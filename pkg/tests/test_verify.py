import ast
import json
import math
from pathlib import Path

import numpy as np
import pytest

import tdrestore.verify
from helpers import hand_line, line_feeder, two_bus_case
from tdrestore.ingest import load_bundled
from tdrestore.netmodel import to_per_unit
from tdrestore.verify import audit_solution, distflow_sweep, newton_power_flow


def net_injections(case, sol, t):
    """Generation minus served load, feeder exchanges as bus loads (export = negative load)."""
    ids = [b.id for b in case.transmission.buses]
    p, q = -sol.served_p[t].copy(), -sol.served_q[t].copy()
    for g, gen in enumerate(case.transmission.generators):
        p[ids.index(gen.bus)] += sol.gen_p[t, g]
        q[ids.index(gen.bus)] += sol.gen_q[t, g]
    for f in case.feeders:
        p[ids.index(f.boundary_bus)] -= sol.exchange_p[f.id][t]
        q[ids.index(f.boundary_bus)] -= sol.exchange_q[f.id][t]
    return p, q


# -- Newton power flow -------------------------------------------------------

def test_newton_zero_injection_is_flat():
    tn = to_per_unit(two_bus_case(load=(0.0, 0.0))).transmission
    res = newton_power_flow(tn, [0, 0], [0, 0], slack_bus=1)
    assert res.converged
    assert res.V == pytest.approx([1, 1], abs=1e-12) and res.theta == pytest.approx([0, 0], abs=1e-12)


def test_newton_two_bus_closed_form():
    tn = to_per_unit(two_bus_case(load=(50.0, 0.0), x=0.1)).transmission
    res = newton_power_flow(tn, [0.0, -0.5], [0.0, 0.0], slack_bus=1)
    # P2 = 10 V2 sin(th2) = -0.5 and Q2 = 0 gives V2 = cos(th2), sin(2 th2) = -0.1
    th2 = -0.5 * math.asin(0.1)
    assert res.converged
    assert res.theta[1] == pytest.approx(th2, abs=1e-10)
    assert res.V[1] == pytest.approx(math.cos(th2), abs=1e-10)
    assert res.theta[1] == pytest.approx(-math.asin(0.05), abs=1e-4)


def test_newton_reports_divergence():
    tn = to_per_unit(two_bus_case(load=(0.0, 0.0), x=0.1)).transmission
    res = newton_power_flow(tn, [0.0, -50.0], [0.0, 0.0], slack_bus=1)
    assert not res.converged


@pytest.mark.parametrize("name", ["cs1", "cs2"])
def test_newton_matches_optimizer(name, request):
    run = request.getfixturevalue(name)
    case, sol = run.problem.case, run.solution
    for t in range(sol.periods):
        p, q = net_injections(case, sol, t)
        res = newton_power_flow(case.transmission, p, q, slack_bus=1, v_slack=sol.V[t, 0])
        assert res.converged
        assert np.abs(res.V - sol.V[t]).max() < 1e-6
        assert np.abs(res.theta - sol.theta[t]).max() < 1e-6


# -- DistFlow sweep ----------------------------------------------------------

def test_sweep_zero_injection():
    feeder = line_feeder(load=(0.0, 0.0))
    res = distflow_sweep(feeder, [0, 0], [0, 0], 1.03)
    assert res.converged and np.all(res.v == 1.03)
    assert np.all(res.P == 0) and np.all(res.l == 0)


def test_sweep_single_line_hand_case():
    feeder = line_feeder(load=(1.0, 0.5), r=0.01, x=0.02)   # r, x already per unit
    res = distflow_sweep(feeder, [0.0, -1.0], [0.0, -0.5], 1.0)
    P, Q, ell, v1 = hand_line()
    assert res.converged
    assert res.v[1] == pytest.approx(v1, abs=1e-12)
    assert res.l[0] == pytest.approx(ell, abs=1e-12)
    assert (res.grid_p, res.grid_q) == pytest.approx((P, Q), abs=1e-12)


@pytest.mark.parametrize("fid", ["D1", "D2", "D3"])
def test_sweep_matches_optimizer(cs1, fid):
    case, sol = cs1.problem.case, cs1.solution
    f, st = case.feeder(fid), sol.feeder(fid)
    pos = {n: k for k, n in enumerate(st.node_ids)}
    lines = {ab: j for j, ab in enumerate(st.lines)}
    for t in range(sol.periods):
        p, q = -st.served_p[t].copy(), -st.served_q[t].copy()
        for arr_p, arr_q, devs in ((st.dg_p, st.dg_q, f.dgs), (st.ess_p, st.ess_q, f.esss),
                                   (st.pv_p, st.pv_q, f.pvs)):
            for k, d in enumerate(devs):
                p[pos[d.node]] += arr_p[t, k]
                q[pos[d.node]] += arr_q[t, k]
        res = distflow_sweep(f, p, q, st.v[t, pos[f.substation_node]])
        assert res.converged
        assert np.abs(res.v - st.v[t]).max() < 1e-6
        for k, ab in enumerate(res.lines):
            j = lines[ab]
            assert abs(res.P[k] - st.p_line[t, j]) < 1e-6
            assert abs(res.l[k] - st.l_line[t, j]) < 1e-6
        assert abs(res.grid_p - st.grid_p[t]) < 1e-6


# -- audit -------------------------------------------------------------------

@pytest.mark.parametrize("name", ["cs1", "cs2"])
def test_audit_passes_on_converged_runs(name, request):
    run = request.getfixturevalue(name)
    rep = audit_solution(run.problem.case, run.solution, kkt_residual=run.result.kkt_residual)
    assert rep.passed, rep.to_text()
    for v in (rep.max_tn_balance_residual, rep.max_dn_balance_residual, rep.max_bound_violation,
              rep.max_boundary_mismatch, rep.oracle_voltage_deviation, rep.max_energy_closure):
        assert v < 1e-6


def test_audit_accepts_physical_unit_case(cs1):
    assert audit_solution(load_bundled("case_study_1"), cs1.solution).passed


def test_perturbed_load_is_named(cs1):
    bad = cs1.solution.copy()
    bad.served_p[2, 3] += 0.01                  # bus 4, period 3
    rep = audit_solution(cs1.problem.case, bad)
    assert not rep.passed
    assert rep.max_tn_balance_residual == pytest.approx(0.01, rel=1e-4)
    assert any(f.startswith("tn_balance: t3 bus 4 P") for f in rep.failures)


def test_ess_circle_violation_is_named(cs1):
    bad = cs1.solution.copy()
    st = bad.feeder("D1")
    s_max = cs1.problem.case.feeder("D1").esss[0].s_max
    st.ess_p[2, 0] = math.sqrt((1.01 * s_max) ** 2 - st.ess_q[2, 0] ** 2)
    rep = audit_solution(cs1.problem.case, bad, run_oracles=False)
    assert any("D1 ESS node 3 t3 MVA circle" in f for f in rep.failures)


def test_boundary_mismatch_detected(cs1):
    bad = cs1.solution.copy()
    bad.exchange_q["D2"][0] += 1e-4
    rep = audit_solution(cs1.problem.case, bad, run_oracles=False)
    assert rep.max_boundary_mismatch == pytest.approx(1e-4, rel=1e-6)
    assert any("boundary: D2 t1 Q" in f for f in rep.failures)


def test_kkt_above_threshold_fails(cs1):
    rep = audit_solution(cs1.problem.case, cs1.solution, kkt_residual=1e-3, run_oracles=False)
    assert not rep.passed and any(f.startswith("kkt") for f in rep.failures)


def test_dimension_mismatch_raises(cs1):
    bad = cs1.solution.copy()
    bad.V = bad.V[:, :5]
    with pytest.raises(ValueError, match="dimension"):
        audit_solution(cs1.problem.case, bad)


def test_report_serializes(cs1):
    rep = audit_solution(cs1.problem.case, cs1.solution, run_oracles=False)
    d = json.loads(rep.to_json())
    assert d["verdict"] == "pass" and d["failures"] == []
    assert rep.to_text().splitlines()[0] == "verdict: pass"


def test_verify_does_not_import_formulation():
    pkg = Path(tdrestore.verify.__file__).parent
    for path in pkg.glob("*.py"):
        tree = ast.parse(path.read_text())
        for node in ast.walk(tree):
            if isinstance(node, ast.ImportFrom):
                assert "formulation" not in (node.module or ""), path.name
                assert "solver" not in (node.module or ""), path.name
