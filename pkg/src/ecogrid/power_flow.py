"""DC and AC (Newton-Raphson) power flow, plus per-bus loss aggregation.

Solvers are pure functions of the network (and an optional warm start);
callers may run many solves concurrently.  An AC solve that diverges or
hits a singular Jacobian returns ``converged=False`` instead of raising,
so contingency screening can count it as an unsolved case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .grid_model import Network

__all__ = [
    "FlowSolution",
    "IslandedNetworkError",
    "solve_dc",
    "solve_ac",
    "aggregate_bus_losses",
    "susceptance_loss_estimate",
]

AC_TOLERANCE = 1e-8  # pu mismatch
AC_MAX_ITER = 30


class IslandedNetworkError(ValueError):
    """The network is not a single island containing the slack bus."""

    def __init__(self, disconnected: list[int]):
        self.disconnected = sorted(disconnected)
        super().__init__(
            f"network is islanded; buses disconnected from slack: {self.disconnected}"
        )


@dataclass(frozen=True)
class FlowSolution:
    """A solved operating point.

    Flows are sending-end values in MW / MVAr, signed relative to the
    branch's from->to orientation.  ``p_loss_branch`` is the real loss on
    each branch (zero for DC); ``p_loss_bus`` attributes half of each
    branch loss to each endpoint.
    """

    model: str  # "dc" | "ac"
    theta: np.ndarray  # rad, per bus
    v: np.ndarray  # pu, per bus
    p_flow: np.ndarray  # MW sending end, per branch
    q_flow: np.ndarray  # MVAr sending end, per branch
    p_flow_recv: np.ndarray  # MW receiving end (to->from sign), per branch
    q_flow_recv: np.ndarray
    p_gen: np.ndarray  # MW, per generator
    q_gen: np.ndarray  # MVAr, per generator
    p_loss_branch: np.ndarray  # MW, per branch
    p_loss_bus: np.ndarray  # MW, per bus
    converged: bool
    iterations: int

    def to_json(self, net: Network) -> str:
        """Serialize with arrays keyed by bus id and branch index."""
        bus_ids = [b.id for b in net.buses]
        doc = {
            "model": self.model,
            "converged": self.converged,
            "iterations": self.iterations,
            "theta_rad": {str(i): t for i, t in zip(bus_ids, self.theta.tolist())},
            "v_pu": {str(i): v for i, v in zip(bus_ids, self.v.tolist())},
            "p_flow_mw": self.p_flow.tolist(),
            "q_flow_mvar": self.q_flow.tolist(),
            "p_gen_mw": self.p_gen.tolist(),
            "q_gen_mvar": self.q_gen.tolist(),
            "p_loss_bus_mw": {str(i): p for i, p in zip(bus_ids, self.p_loss_bus.tolist())},
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def _check_connected(net: Network, in_service=None) -> None:
    idx = net.bus_index
    n = len(net.buses)
    adj: list[list[int]] = [[] for _ in range(n)]
    for br in net.branches:
        if not br.in_service:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    stack = [idx[net.slack_bus]]
    seen[stack[0]] = True
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    if not all(seen):
        raise IslandedNetworkError([net.buses[i].id for i in range(n) if not seen[i]])


def dc_susceptance_matrix(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Full B' matrix and per-branch susceptances 1/(x*tap), in-service only."""
    idx = net.bus_index
    n = len(net.buses)
    b_full = np.zeros((n, n))
    b_branch = np.zeros(len(net.branches))
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        b = 1.0 / (br.x * br.tap_ratio)
        b_branch[k] = b
        i, j = idx[br.from_bus], idx[br.to_bus]
        b_full[i, i] += b
        b_full[j, j] += b
        b_full[i, j] -= b
        b_full[j, i] -= b
    return b_full, b_branch


def _bus_injections_mw(net: Network) -> np.ndarray:
    idx = net.bus_index
    p = np.array([-b.p_load for b in net.buses])
    for g in net.generators:
        if g.in_service:
            p[idx[g.bus]] += g.p_set
    return p


def solve_dc(net: Network) -> FlowSolution:
    """Linear B-theta power flow: lossless, flat voltage profile.

    The slack bus absorbs any injection imbalance; its units take the
    adjustment in order, none driven negative while a later unit still
    has output to give up.
    """
    _check_connected(net)
    idx = net.bus_index
    n = len(net.buses)
    slack = idx[net.slack_bus]

    b_full, b_branch = dc_susceptance_matrix(net)
    p_inj = _bus_injections_mw(net) / net.base_mva

    # Imbalance goes to the slack bus before solving so that the reduced
    # system is consistent; the slack generator output is updated below.
    imbalance = -p_inj.sum()
    p_inj = p_inj.copy()
    p_inj[slack] += imbalance

    keep = [i for i in range(n) if i != slack]
    theta = np.zeros(n)
    try:
        theta[keep] = np.linalg.solve(b_full[np.ix_(keep, keep)], p_inj[keep])
    except np.linalg.LinAlgError:
        # The connectivity check above catches islands; a singular matrix
        # here means a degenerate branch set.
        raise IslandedNetworkError([net.buses[i].id for i in keep]) from None

    p_flow = np.zeros(len(net.branches))
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        p_flow[k] = b_branch[k] * (theta[i] - theta[j]) * net.base_mva

    p_gen = np.array([g.p_set if g.in_service else 0.0 for g in net.generators])
    slack_gens = [k for k, g in enumerate(net.generators)
                  if g.in_service and g.bus == net.slack_bus]
    # cascade so no unit is driven negative while others still have output
    remaining = imbalance * net.base_mva
    for k in slack_gens:
        new = p_gen[k] + remaining
        if new < 0.0 and k != slack_gens[-1]:
            remaining = new
            p_gen[k] = 0.0
        else:
            p_gen[k] = new
            remaining = 0.0
            break

    z = np.zeros(len(net.branches))
    return FlowSolution(
        model="dc",
        theta=theta,
        v=np.ones(n),
        p_flow=p_flow,
        q_flow=z.copy(),
        p_flow_recv=-p_flow,
        q_flow_recv=z.copy(),
        p_gen=p_gen,
        q_gen=np.zeros(len(net.generators)),
        p_loss_branch=z.copy(),
        p_loss_bus=np.zeros(n),
        converged=True,
        iterations=0,
    )


def build_ybus(net: Network) -> np.ndarray:
    idx = net.bus_index
    n = len(net.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        ys = 1.0 / complex(br.r, br.x)
        bc = 1j * br.b_charging / 2.0
        t = br.tap_ratio
        i, j = idx[br.from_bus], idx[br.to_bus]
        y[i, i] += (ys + bc) / (t * t)
        y[j, j] += ys + bc
        y[i, j] += -ys / t
        y[j, i] += -ys / t
    for k, bus in enumerate(net.buses):
        y[k, k] += complex(bus.gs, bus.bs) / net.base_mva
    return y


def _branch_terminal_powers(net: Network, v: np.ndarray, theta: np.ndarray):
    """Sending and receiving complex powers (pu) for every in-service branch."""
    idx = net.bus_index
    vc = v * np.exp(1j * theta)
    nbr = len(net.branches)
    s_from = np.zeros(nbr, dtype=complex)
    s_to = np.zeros(nbr, dtype=complex)
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        ys = 1.0 / complex(br.r, br.x)
        bc = 1j * br.b_charging / 2.0
        t = br.tap_ratio
        i, j = idx[br.from_bus], idx[br.to_bus]
        i_from = ((ys + bc) / (t * t)) * vc[i] - (ys / t) * vc[j]
        i_to = (ys + bc) * vc[j] - (ys / t) * vc[i]
        s_from[k] = vc[i] * np.conj(i_from)
        s_to[k] = vc[j] * np.conj(i_to)
    return s_from, s_to


def solve_ac(net: Network, warm_start: FlowSolution | None = None) -> FlowSolution:
    """Full Newton-Raphson power flow on polar mismatch equations.

    PV buses hold voltage at the generator setpoint while reactive output
    stays within limits; a violated limit converts the bus to PQ (one
    re-switch per bus).  Divergence (three consecutive mismatch
    increases), a singular Jacobian, or hitting the iteration cap yields
    ``converged=False``.
    """
    _check_connected(net)
    idx = net.bus_index
    n = len(net.buses)
    base = net.base_mva
    slack = idx[net.slack_bus]

    ybus = build_ybus(net)
    p_sched = _bus_injections_mw(net) / base
    q_load = np.array([b.q_load for b in net.buses]) / base

    gens_at = [[] for _ in range(n)]
    for k, g in enumerate(net.generators):
        if g.in_service:
            gens_at[idx[g.bus]].append(k)

    q_min_bus = np.zeros(n)
    q_max_bus = np.zeros(n)
    for i in range(n):
        for k in gens_at[i]:
            q_min_bus[i] += net.generators[k].q_min / base
            q_max_bus[i] += net.generators[k].q_max / base

    kinds = np.array([0 if b.bus_kind == "pq" else (1 if b.bus_kind == "pv" else 2)
                      for b in net.buses])
    v_sched = np.ones(n)
    for i in range(n):
        if kinds[i] in (1, 2) and gens_at[i]:
            v_sched[i] = net.generators[gens_at[i][0]].v_set
    # q fixed at a limit once a PV bus is switched to PQ
    q_fixed = np.zeros(n)
    switched = np.zeros(n, dtype=int)  # re-switch budget: at most one switch per bus

    if warm_start is not None:
        v = warm_start.v.copy()
        theta = warm_start.theta.copy()
    else:
        v = np.ones(n)
        theta = np.zeros(n)
    v[kinds == 1] = v_sched[kinds == 1]
    v[slack] = v_sched[slack] if gens_at[slack] else 1.0
    theta[slack] = 0.0

    total_iters = 0
    converged = False

    for _outer in range(1 + 2 * n):
        pv = [i for i in range(n) if kinds[i] == 1]
        pq = [i for i in range(n) if kinds[i] == 0]
        pvpq = pv + pq

        def injections(v, theta):
            vc = v * np.exp(1j * theta)
            s = vc * np.conj(ybus @ vc)
            return s.real, s.imag

        def mismatch(v, theta):
            p_calc, q_calc = injections(v, theta)
            q_sched = -q_load + q_fixed
            dp = p_sched - p_calc
            dq = q_sched - q_calc
            f = np.concatenate([dp[pvpq], dq[pq]])
            return f

        prev_norm = math.inf
        increases = 0
        failed = False
        f = mismatch(v, theta)
        norm = np.max(np.abs(f)) if f.size else 0.0
        it = 0
        while norm > AC_TOLERANCE and it < AC_MAX_ITER:
            jac = _jacobian(ybus, v, theta, pvpq, pq)
            try:
                dx = np.linalg.solve(jac, f)
            except np.linalg.LinAlgError:
                failed = True
                break
            theta[pvpq] += dx[: len(pvpq)]
            v[pq] += dx[len(pvpq):] * v[pq]
            it += 1
            total_iters += 1
            f = mismatch(v, theta)
            norm = np.max(np.abs(f)) if f.size else 0.0
            if norm > prev_norm:
                increases += 1
                if increases >= 3:
                    failed = True
                    break
            else:
                increases = 0
            prev_norm = norm

        if failed or norm > AC_TOLERANCE:
            converged = False
            break

        # Q-limit check on PV buses; clamp and convert to PQ, once per bus.
        _, q_calc = injections(v, theta)
        violated = None
        for i in pv:
            if switched[i]:
                continue
            q_gen_bus = q_calc[i] + q_load[i]
            if q_gen_bus > q_max_bus[i] + 1e-9:
                violated = (i, q_max_bus[i])
                break
            if q_gen_bus < q_min_bus[i] - 1e-9:
                violated = (i, q_min_bus[i])
                break
        if violated is None:
            converged = True
            break
        i, q_lim = violated
        kinds[i] = 0
        q_fixed[i] = q_lim
        switched[i] = 1

    # Allocate bus-level generation back to units.
    p_calc, q_calc = (None, None)
    vc = v * np.exp(1j * theta)
    s = vc * np.conj(ybus @ vc)
    p_calc, q_calc = s.real, s.imag

    p_gen = np.array([g.p_set if g.in_service else 0.0 for g in net.generators])
    q_gen = np.zeros(len(net.generators))
    for i in range(n):
        ks = gens_at[i]
        if not ks:
            continue
        q_bus = (q_calc[i] + q_load[i]) * base
        ranges = np.array([net.generators[k].q_max - net.generators[k].q_min for k in ks])
        if ranges.sum() > 0:
            shares = ranges / ranges.sum()
        else:
            shares = np.full(len(ks), 1.0 / len(ks))
        lo = sum(net.generators[k].q_min for k in ks)
        for k, share in zip(ks, shares):
            q_gen[k] = net.generators[k].q_min + share * (q_bus - lo)
    if gens_at[slack]:
        p_bus = (p_calc[slack] + net.buses[slack].p_load / base) * base
        others = sum(net.generators[k].p_set for k in gens_at[slack][1:])
        p_gen[gens_at[slack][0]] = p_bus - others

    s_from, s_to = _branch_terminal_powers(net, v, theta)
    p_loss_branch = (s_from.real + s_to.real) * base
    in_service = np.array([br.in_service for br in net.branches], dtype=bool)
    if in_service.size:
        p_loss_branch[~in_service] = 0.0

    p_loss_bus = np.zeros(n)
    for k, br in enumerate(net.branches):
        if br.in_service:
            half = p_loss_branch[k] / 2.0
            p_loss_bus[idx[br.from_bus]] += half
            p_loss_bus[idx[br.to_bus]] += half

    return FlowSolution(
        model="ac",
        theta=theta,
        v=v,
        p_flow=s_from.real * base,
        q_flow=s_from.imag * base,
        p_flow_recv=s_to.real * base,
        q_flow_recv=s_to.imag * base,
        p_gen=p_gen,
        q_gen=q_gen,
        p_loss_branch=p_loss_branch,
        p_loss_bus=p_loss_bus,
        converged=converged,
        iterations=total_iters,
    )


def _jacobian(ybus, v, theta, pvpq, pq):
    n = len(v)
    vc = v * np.exp(1j * theta)
    ibus = ybus @ vc
    diag_v = np.diag(vc)
    diag_i = np.diag(ibus)
    diag_vnorm = np.diag(vc / v)
    ds_dtheta = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
    # dV update is scaled by V, so use V * dS/dV
    ds_dvm = ds_dvm @ np.diag(v)

    j11 = ds_dtheta[np.ix_(pvpq, pvpq)].real
    j12 = ds_dvm[np.ix_(pvpq, pq)].real
    j21 = ds_dtheta[np.ix_(pq, pvpq)].imag
    j22 = ds_dvm[np.ix_(pq, pq)].imag
    return np.block([[j11, j12], [j21, j22]])


def aggregate_bus_losses(net: Network, sol: FlowSolution) -> np.ndarray:
    """Per-bus real losses (MW): half of each branch loss per endpoint.

    Losses are computed exactly from branch terminal powers; the split is
    an attribution convention only, and conserves energy.
    """
    idx = net.bus_index
    out = np.zeros(len(net.buses))
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        half = sol.p_loss_branch[k] / 2.0
        out[idx[br.from_bus]] += half
        out[idx[br.to_bus]] += half
    return out


def susceptance_loss_estimate(net: Network, sol: FlowSolution) -> np.ndarray:
    """Diagnostic per-bus loss figure using (P^2+Q^2)/(B*V^2) branch terms.

    Kept separate from :func:`aggregate_bus_losses` for comparison; the
    exact terminal-power losses are what keep the flow matrix balanced.
    """
    idx = net.bus_index
    out = np.zeros(len(net.buses))
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        b_ij = 1.0 / (br.x * br.tap_ratio)
        i, j = idx[br.from_bus], idx[br.to_bus]
        s2 = (sol.p_flow[k] ** 2 + sol.q_flow[k] ** 2) / net.base_mva
        out[i] += 0.5 * s2 / (b_ij * sol.v[i] ** 2) / net.base_mva
        out[j] += 0.5 * s2 / (b_ij * sol.v[j] ** 2) / net.base_mva
    return out
