import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from helpers import two_bus_case
from tdrestore.formulation import assemble, index_variables
from tdrestore.ingest import load_bundled
from tdrestore.netmodel import (
    CentralGenerator, ProfileSeries, ScenarioConfig, TransmissionBranch, TransmissionBus,
    TransmissionNetwork, build_case, to_per_unit, validate_case,
)
from tdrestore.nlp import dense_problem
from tdrestore.solution import empty_solution, from_records, to_records
from tdrestore.solver import SolverOptions, check_derivatives, random_interior_point, solve
from tdrestore.solver.ldl import SymbolicLDL
from tdrestore.verify import audit_solution, distflow_sweep, newton_power_flow

SLOW = settings(max_examples=15, deadline=None,
                suppress_health_check=[HealthCheck.function_scoped_fixture])
BUNDLED = to_per_unit(load_bundled("case_study_1"))
RP1 = assemble(BUNDLED)


@st.composite
def chain_cases(draw):
    """Radial transmission chains with random loads, generators and horizon."""
    nb = draw(st.integers(2, 5))
    T = draw(st.integers(1, 3))
    loads = draw(st.lists(st.tuples(st.floats(0, 40), st.floats(-10, 20)), min_size=nb - 1,
                          max_size=nb - 1))
    buses = (TransmissionBus(1),) + tuple(TransmissionBus(k + 2, *ld) for k, ld in enumerate(loads))
    branches = tuple(TransmissionBranch(k + 1, k + 2, 0.01, draw(st.floats(0.05, 0.3)))
                     for k in range(nb - 1))
    gens = (CentralGenerator(1, 0, 300, -100, 100),)
    prof = tuple(draw(st.floats(0.5, 1.0)) for _ in range(T))
    sc = ScenarioConfig(periods=T, critical_fraction=draw(st.floats(0, 1)),
                        w_t=draw(st.floats(0.5, 3)))
    return build_case(TransmissionNetwork(buses, branches, gens), (), sc,
                      {"transmission": ProfileSeries(prof, (0.0,) * T)})


@given(chain_cases())
@SLOW
def test_index_is_bijection(case):
    idx = index_variables(to_per_unit(case))
    slots = np.concatenate([a.ravel() for _, a in idx.slot_arrays()])
    assert np.array_equal(np.sort(slots), np.arange(idx.n))
    assert idx.n == idx.periods * idx.per_period


@given(chain_cases())
@SLOW
def test_critical_is_fraction_of_total(case):
    f = case.scenario.critical_fraction
    for b in case.transmission.buses:
        assert b.p_load_critical == f * b.p_load_total
        assert b.q_load_critical == f * b.q_load_total


@given(chain_cases(), st.floats(-2, 2), st.floats(0, 2))
@SLOW
def test_validation_is_unit_invariant(case, dt, frac):
    case = dataclasses.replace(case, scenario=dataclasses.replace(
        case.scenario, delta_t=dt, critical_fraction=frac))
    # messages quote values in the case's own units, so compare where each error points
    def where(c):
        return [e.split(":")[0] for e in validate_case(c).errors]
    assert where(to_per_unit(case)) == where(case)
    assert validate_case(to_per_unit(case)).ok == validate_case(case).ok


@given(chain_cases(), st.integers(0, 2**31 - 1))
@SLOW
def test_small_case_derivatives(case, seed):
    rp = assemble(case)
    x = random_interior_point(rp.nlp, np.random.default_rng(seed), center=rp.hints)
    assert check_derivatives(rp.nlp, x, seed=seed).ok


@given(st.floats(1.0, 5.0), st.floats(0.01, 4.0), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_transmission_weight_is_monotone(w, dw, seed):
    rng = np.random.default_rng(seed)
    scen = dataclasses.replace(BUNDLED.scenario, w_t=w)
    lo = assemble(dataclasses.replace(BUNDLED, scenario=scen), check=False)
    hi = assemble(dataclasses.replace(BUNDLED, scenario=dataclasses.replace(scen, w_t=w + dw)),
                  check=False)
    x = random_interior_point(lo.nlp, rng)   # served TN load strictly below total
    assert hi.objective(x) > lo.objective(x)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["D1", "D2", "D3"]))
@settings(max_examples=20, deadline=None)
def test_sweep_solves_formulation_rows(seed, fid):
    """A DistFlow sweep point satisfies the model's feeder rows and closes the energy balance."""
    rng = np.random.default_rng(seed)
    f = BUNDLED.feeder(fid)
    fs = RP1.index.feeder(fid)
    pos = {n.id: k for k, n in enumerate(f.nodes)}
    loads = [pos[n] for n in fs.load_nodes]
    p, q = np.zeros(len(f.nodes)), np.zeros(len(f.nodes))
    p[loads] = -rng.uniform(0, 0.05, len(loads))
    q[loads] = -rng.uniform(-0.01, 0.03, len(loads))
    res = distflow_sweep(f, p, q, rng.uniform(0.95, 1.1))
    assert res.converged
    x = np.zeros(RP1.nlp.n)
    x[fs.v[0]] = [res.v[pos[n]] for n in fs.node_ids]
    line_of = {(a, b): k for k, (a, b) in enumerate(res.lines)}
    for j, (a, b, _) in enumerate(fs.lines):
        k = line_of[(a, b)]
        x[fs.p_line[0, j]], x[fs.q_line[0, j]], x[fs.l_line[0, j]] = res.P[k], res.Q[k], res.l[k]
    for j, n in enumerate(fs.load_nodes):
        x[fs.load_p[0, j]], x[fs.load_q[0, j]] = -p[pos[n]], -q[pos[n]]
    x[fs.grid_p[0]], x[fs.grid_q[0]] = res.grid_p, res.grid_q
    rows = [i for i, nm in enumerate(RP1.nlp.eq_names)
            if nm.startswith(f"t1.{fid}.") and "boundary" not in nm and "ess" not in nm]
    assert np.abs(RP1.nlp.eq(x)[rows]).max() < 1e-8
    losses = sum(ln.r * res.l[k] for k, (a, b) in enumerate(res.lines)
                 for ln in f.lines if {ln.from_node, ln.to_node} == {a, b})
    assert res.grid_p + p.sum() - losses == pytest.approx(0.0, abs=1e-10)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_newton_solves_formulation_rows(seed):
    rng = np.random.default_rng(seed)
    case = to_per_unit(two_bus_case(load=(80.0, 30.0)))
    rp = assemble(case)
    pl, ql = rng.uniform(0, 0.8), rng.uniform(-0.2, 0.3)     # any value; bounds are not checked
    res = newton_power_flow(case.transmission, [0.0, -pl], [0.0, -ql], slack_bus=1)
    assert res.converged
    x = np.zeros(rp.nlp.n)
    x[rp.index.V[0]] = res.V
    x[rp.index.theta[0]] = res.theta
    s = res.slack_injection
    x[rp.index.gen_p[0, 0]], x[rp.index.gen_q[0, 0]] = s.real, s.imag
    x[rp.index.load_p[0, 0]], x[rp.index.load_q[0, 0]] = pl, ql
    assert np.abs(rp.nlp.eq(x)).max() < 1e-9


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_box_quadratic_matches_projection(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 5, n)
    c = rng.uniform(-3, 3, n)
    lo, hi = -rng.uniform(0.1, 2, n), rng.uniform(0.1, 2, n)
    p = dense_problem(n, lambda x: 0.5 * d @ (x - c) ** 2, lambda x: d * (x - c),
                      lambda x: np.diag(d), lower=lo, upper=hi)
    res = solve(p, np.zeros(n), SolverOptions(kkt_tolerance=1e-10))
    assert res.converged
    assert np.abs(res.x - np.clip(c, lo, hi)).max() < 1e-8
    assert np.all(res.x >= lo) and np.all(res.x <= hi)


@given(st.integers(2, 25), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_ldl_inertia(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
    A = A + A.T + np.diag(rng.choice([-1, 1], n) * rng.uniform(3, 5, n) * n ** 0.5)
    r, c = np.nonzero(np.tril(A))
    pos, neg = SymbolicLDL(r, c, n).factor(A[r, c])
    ev = np.linalg.eigvalsh(A)
    assert (pos, neg) == ((ev > 0).sum(), (ev < 0).sum())


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_state_records_round_trip(seed):
    rng = np.random.default_rng(seed)
    sol = empty_solution(BUNDLED)
    sol.V[:] = rng.uniform(0.9, 1.1, sol.V.shape)
    sol.exchange_p["D3"][:] = rng.standard_normal(6)
    sol.feeder("D1").l_line[:] = rng.random(sol.feeder("D1").l_line.shape)
    back = from_records(BUNDLED, to_records(sol))
    assert np.array_equal(back.V, sol.V)
    assert np.array_equal(back.exchange_p["D3"], sol.exchange_p["D3"])
    assert np.array_equal(back.feeder("D1").l_line, sol.feeder("D1").l_line)


@given(st.floats(0, 1e-4), st.integers(0, 5), st.integers(0, 13))
@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
def test_verdict_matches_thresholds(cs1, delta, t, bus):
    bad = cs1.solution.copy()
    bad.V[t, bus] += delta
    rep = audit_solution(cs1.problem.case, bad, run_oracles=False)
    worst = max(rep.max_tn_balance_residual, rep.max_dn_balance_residual, rep.max_bound_violation,
                rep.max_boundary_mismatch, rep.max_ess_violation, rep.max_energy_closure)
    assert rep.passed == (worst <= rep.threshold)
