"""Case builders and a per-session solve cache shared by the tests."""

import time
from dataclasses import dataclass

import numpy as np

from tdrestore.formulation import RestorationProblem, assemble, extract_solution
from tdrestore.ingest import load_bundled
from tdrestore.netmodel import (
    CentralGenerator, DistributionFeeder, FeederLine, FeederNode, ProfileSeries, ScenarioConfig,
    TransmissionBranch, TransmissionBus, TransmissionNetwork, build_case,
)
from tdrestore.solution import RestorationSolution
from tdrestore.solver import SolveResult, default_start, random_interior_point, solve


@dataclass
class Solved:
    problem: RestorationProblem
    result: SolveResult
    solution: RestorationSolution
    runtime: float


_cache: dict[str, Solved] = {}


def solve_bundled(name: str) -> Solved:
    """Solve a bundled case once per test session."""
    if name not in _cache:
        problem = assemble(load_bundled(name))
        t0 = time.perf_counter()
        result = solve(problem.nlp, default_start(problem.nlp, problem.hints))
        runtime = time.perf_counter() - t0
        _cache[name] = Solved(problem, result, extract_solution(problem, result.x), runtime)
    return _cache[name]


def flat_profiles(periods=1, load=1.0, pv=0.0):
    return {"transmission": ProfileSeries((load,) * periods, (pv,) * periods)}


def two_bus_case(load=(50.0, 10.0), periods=1, x=0.1, r=0.0):
    tn = TransmissionNetwork(
        (TransmissionBus(1), TransmissionBus(2, *load)),
        (TransmissionBranch(1, 2, r, x),),
        (CentralGenerator(1, 0.0, 100.0, -50.0, 50.0),))
    return build_case(tn, (), ScenarioConfig(periods=periods), flat_profiles(periods))


def line_feeder(fid="F", load=(1.0, 0.5), r=0.01, x=0.02, bus=2):
    """Two-node feeder: substation node 1, load at node 2 (MW/MVAr)."""
    return DistributionFeeder(
        fid, (FeederNode(1), FeederNode(2, *load)), (FeederLine(1, 2, r, x),),
        substation_node=1, boundary_bus=bus)


def interior_point(problem, seed=0):
    return random_interior_point(problem.nlp, np.random.default_rng(seed),
                                 center=default_start(problem.nlp, problem.hints))


def hand_line(p_load=1.0, q_load=0.5, r=0.01, x=0.02, v0=1.0):
    """Scalar fixed point of the single-line branch-flow equations."""
    ell = 0.0
    for _ in range(200):
        P, Q = p_load + r * ell, q_load + x * ell
        ell = (P * P + Q * Q) / v0
    P, Q = p_load + r * ell, q_load + x * ell
    v1 = v0 - 2 * (r * P + x * Q) + (r * r + x * x) * ell
    return P, Q, ell, v1
