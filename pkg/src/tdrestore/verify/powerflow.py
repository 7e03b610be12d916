"""Reference solvers: Newton-Raphson AC power flow and a DistFlow sweep.

Both work from raw network data (per unit) and share no code with the
optimization model.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..netmodel import DistributionFeeder, TransmissionNetwork


def bus_admittance(tn: TransmissionNetwork) -> np.ndarray:
    """Dense complex bus admittance matrix, pi-model branches, bus order of ``tn.buses``."""
    pos = {b.id: k for k, b in enumerate(tn.buses)}
    Y = np.zeros((len(pos), len(pos)), dtype=complex)
    for br in tn.branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        Y[f, f] += ys + ysh
        Y[t, t] += ys + ysh
        Y[f, t] -= ys
        Y[t, f] -= ys
    return Y


def branch_losses(tn: TransmissionNetwork, V, theta) -> float:
    """Total active loss as the sum over branches of both end injections."""
    pos = {b.id: k for k, b in enumerate(tn.buses)}
    Vc = np.asarray(V) * np.exp(1j * np.asarray(theta))
    total = 0.0
    for br in tn.branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        i_f = (Vc[f] - Vc[t]) * ys + Vc[f] * ysh
        i_t = (Vc[t] - Vc[f]) * ys + Vc[t] * ysh
        total += (Vc[f] * np.conj(i_f) + Vc[t] * np.conj(i_t)).real
    return float(total)


@dataclass
class PowerFlowResult:
    V: np.ndarray
    theta: np.ndarray
    converged: bool
    iterations: int
    mismatch: float
    slack_injection: complex

    def __bool__(self) -> bool:
        return self.converged


def newton_power_flow(tn: TransmissionNetwork, p_inj, q_inj, slack_bus: int,
                      v_slack: float = 1.0, theta_slack: float = 0.0, tol: float = 1e-10,
                      max_iter: int = 50, V0=None, theta0=None) -> PowerFlowResult:
    """Solve the polar power-flow equations with every non-slack bus PQ.

    ``p_inj``/``q_inj`` are net injections (generation minus load) per bus in
    ``tn.buses`` order; the slack entries are ignored. Divergence is reported
    through ``converged=False``, not raised.
    """
    ids = [b.id for b in tn.buses]
    if slack_bus not in ids:
        raise ValueError(f"slack bus {slack_bus} not in network")
    nb = len(ids)
    s = ids.index(slack_bus)
    Y = bus_admittance(tn)
    Sset = np.asarray(p_inj, float) + 1j * np.asarray(q_inj, float)
    Vm = np.ones(nb) if V0 is None else np.array(V0, float)
    Va = np.zeros(nb) if theta0 is None else np.array(theta0, float)
    Vm[s], Va[s] = v_slack, theta_slack
    pq = np.array([k for k in range(nb) if k != s], dtype=int)

    def mismatch(Vm, Va):
        V = Vm * np.exp(1j * Va)
        S = V * np.conj(Y @ V)
        d = S - Sset
        return V, S, np.concatenate([d.real[pq], d.imag[pq]])

    V, S, F = mismatch(Vm, Va)
    it = 0
    while True:
        err = float(np.abs(F).max()) if len(F) else 0.0
        if not np.isfinite(err):
            break
        if err < tol:
            return PowerFlowResult(Vm, Va, True, it, err, complex(S[s]))
        if it >= max_iter:
            break
        Ibus = Y @ V
        dV = np.diag(V)
        dS_dVa = 1j * dV @ np.conj(np.diag(Ibus) - Y @ dV)
        dS_dVm = dV @ np.conj(Y @ np.diag(V / np.abs(V))) + np.conj(np.diag(Ibus)) @ np.diag(V / np.abs(V))
        J = np.block([[dS_dVa.real[np.ix_(pq, pq)], dS_dVm.real[np.ix_(pq, pq)]],
                      [dS_dVa.imag[np.ix_(pq, pq)], dS_dVm.imag[np.ix_(pq, pq)]]])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        Va[pq] += dx[: len(pq)]
        Vm[pq] += dx[len(pq):]
        V, S, F = mismatch(Vm, Va)
        it += 1
    return PowerFlowResult(Vm, Va, False, it, float(np.abs(F).max()) if len(F) else 0.0,
                           complex(S[s]))


@dataclass
class DistFlowResult:
    node_ids: list[int]
    lines: list[tuple[int, int]]
    v: np.ndarray          # squared voltage per node
    P: np.ndarray          # sending-end flow per oriented line
    Q: np.ndarray
    l: np.ndarray
    grid_p: float
    grid_q: float
    converged: bool
    iterations: int

    def __bool__(self) -> bool:
        return self.converged


def _tree(feeder: DistributionFeeder):
    adj = {n.id: [] for n in feeder.nodes}
    for ln in feeder.lines:
        adj[ln.from_node].append((ln.to_node, ln))
        adj[ln.to_node].append((ln.from_node, ln))
    order, lines, seen = [], [], {feeder.substation_node}
    queue = deque([feeder.substation_node])
    while queue:
        a = queue.popleft()
        order.append(a)
        for b, ln in sorted(adj[a], key=lambda e: e[0]):
            if b not in seen:
                seen.add(b)
                lines.append((a, b, ln.r, ln.x))
                queue.append(b)
    if len(seen) != len(adj):
        raise ValueError(f"feeder {feeder.id} is not connected")
    return order, lines


def distflow_sweep(feeder: DistributionFeeder, p_inj, q_inj, v_sub: float,
                   tol: float = 1e-10, max_iter: int = 200) -> DistFlowResult:
    """Backward/forward sweep of the branch-flow equations on a radial feeder.

    ``p_inj``/``q_inj`` are net injections per node (``feeder.nodes`` order),
    excluding the substation exchange, which is returned as ``grid_p``/``grid_q``.
    """
    node_ids = [n.id for n in feeder.nodes]
    pos = {n: k for k, n in enumerate(node_ids)}
    _, lines = _tree(feeder)
    nl = len(lines)
    pi = np.asarray(p_inj, float)
    qi = np.asarray(q_inj, float)
    child_lines = {n: [] for n in node_ids}
    for k, (a, b, _, _) in enumerate(lines):
        child_lines[a].append(k)
    r = np.array([ln[2] for ln in lines])
    x = np.array([ln[3] for ln in lines])
    v = np.full(len(node_ids), float(v_sub))
    l = np.zeros(nl)
    P = np.zeros(nl)
    Q = np.zeros(nl)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # backward: flows from the leaves up
        for k in range(nl - 1, -1, -1):
            b = lines[k][1]
            P[k] = sum(P[c] for c in child_lines[b]) - pi[pos[b]] + r[k] * l[k]
            Q[k] = sum(Q[c] for c in child_lines[b]) - qi[pos[b]] + x[k] * l[k]
        # forward: voltages from the substation down
        v_new = v.copy()
        v_new[pos[feeder.substation_node]] = v_sub
        for k, (a, b, _, _) in enumerate(lines):
            v_new[pos[b]] = (v_new[pos[a]] - 2 * (r[k] * P[k] + x[k] * Q[k])
                             + (r[k] ** 2 + x[k] ** 2) * l[k])
        if np.any(v_new <= 0) or not np.all(np.isfinite(v_new)):
            v = v_new
            break
        l_new = np.array([(P[k] ** 2 + Q[k] ** 2) / v_new[pos[a]]
                          for k, (a, _, _, _) in enumerate(lines)])
        change = max(np.abs(v_new - v).max(), np.abs(l_new - l).max() if nl else 0.0)
        v, l = v_new, l_new
        if change < tol:
            converged = True
            break
    # final flows consistent with the converged currents
    for k in range(nl - 1, -1, -1):
        b = lines[k][1]
        P[k] = sum(P[c] for c in child_lines[b]) - pi[pos[b]] + r[k] * l[k]
        Q[k] = sum(Q[c] for c in child_lines[b]) - qi[pos[b]] + x[k] * l[k]
    sub = feeder.substation_node
    grid_p = sum(P[c] for c in child_lines[sub]) - pi[pos[sub]]
    grid_q = sum(Q[c] for c in child_lines[sub]) - qi[pos[sub]]
    return DistFlowResult(node_ids, [(a, b) for a, b, _, _ in lines], v, P.copy(), Q.copy(),
                          l, float(grid_p), float(grid_q), converged, it)
