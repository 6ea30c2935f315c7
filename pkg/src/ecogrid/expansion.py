"""Robustness-oriented network expansion under the DC model.

Chooses candidate-branch build decisions and generator dispatch that
maximize the relaxed ecological robustness subject to DC power balance
and generator limits.  Binary decisions are handled by branch-and-bound;
each node solves a continuous subproblem by projected gradient ascent
with the decision variables relaxed to [0, 1].  Bus angles are
eliminated through the DC network equations, so every iterate is balance
feasible by construction and the only constraints left are boxes plus
the total-generation equality.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .eco_flow import eco_gradient, eco_metrics_exact, eco_metrics_relaxed, build_efm
from .grid_model import CandidateSet, Network, apply_decisions
from .power_flow import FlowSolution, solve_dc

__all__ = [
    "ExpansionProblem",
    "ExpansionResult",
    "SubproblemResult",
    "solve_expansion",
    "evaluate_decisions",
    "relaxed_subproblem",
]


@dataclass(frozen=True)
class ExpansionProblem:
    net: Network
    cands: CandidateSet
    mode: str = "opf"  # "structure" | "opf"
    order: int = 1
    node_budget: int = 10_000
    time_budget: float | None = None  # seconds; None keeps runs deterministic
    nlp_tolerance: float = 1e-7
    nlp_max_iter: int = 400

    def __post_init__(self) -> None:
        if self.mode not in ("structure", "opf"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.node_budget <= 0 or (self.time_budget is not None and self.time_budget <= 0):
            raise ValueError("budgets must be positive")
        if self.order < 1:
            raise ValueError("relaxation order must be >= 1")


@dataclass(frozen=True)
class SubproblemResult:
    value: float
    p_gen: np.ndarray  # MW, per in-service generator slot (full length)
    alpha: np.ndarray
    kkt_residual: float
    converged: bool


@dataclass(frozen=True)
class ExpansionResult:
    decisions: tuple[int, ...]
    dispatch: FlowSolution
    solved_r_eco: float
    achieved_r_eco_structure: float
    achieved_r_eco_opf: float
    status: str  # "optimal-within-budget" | "incumbent-only" | "infeasible"
    nodes_explored: int
    wall_time: float
    search_log: tuple[dict, ...] = field(default=(), repr=False)

    def search_log_ndjson(self) -> str:
        return "\n".join(json.dumps(rec, sort_keys=True) for rec in self.search_log) + "\n"

    def to_json(self) -> str:
        # wall_time intentionally excluded: outputs must be reproducible
        # byte-for-byte under a fixed seed/config.
        return json.dumps(
            {
                "decisions": list(self.decisions),
                "solved_r_eco": self.solved_r_eco,
                "achieved_r_eco_structure": self.achieved_r_eco_structure,
                "achieved_r_eco_opf": self.achieved_r_eco_opf,
                "status": self.status,
                "nodes_explored": self.nodes_explored,
            },
            sort_keys=True,
            indent=2,
        )


class _DcModel:
    """Reduced DC operator and the flow-matrix assembly shared by all
    continuous subproblems of one expansion run."""

    def __init__(self, net: Network, cands: CandidateSet, order: int):
        self.net = net
        self.cands = cands
        self.order = order
        self.base = net.base_mva
        idx = net.bus_index
        self.n_bus = len(net.buses)
        self.slack = idx[net.slack_bus]
        self.keep = [i for i in range(self.n_bus) if i != self.slack]
        self.pos_in_keep = {b: p for p, b in enumerate(self.keep)}

        self.loads = np.array([b.p_load for b in net.buses])

        self.gens = [g for g in net.generators if g.in_service]
        self.gen_bus = np.array([idx[g.bus] for g in self.gens])
        self.p_min = np.array([g.p_min for g in self.gens])
        self.p_max = np.array([g.p_max for g in self.gens])
        if np.any(self.p_min < 0):
            raise ValueError("negative generator minimum not supported by the expansion model")

        ex = [(idx[br.from_bus], idx[br.to_bus], 1.0 / (br.x * br.tap_ratio))
              for br in net.branches if br.in_service]
        self.ex_i = np.array([e[0] for e in ex], dtype=int)
        self.ex_j = np.array([e[1] for e in ex], dtype=int)
        self.ex_b = np.array([e[2] for e in ex])

        self.cd_i = np.array([idx[c.from_bus] for c in cands.entries], dtype=int)
        self.cd_j = np.array([idx[c.to_bus] for c in cands.entries], dtype=int)
        self.cd_b = np.array([1.0 / (c.x * c.tap_ratio) for c in cands.entries])
        self.n_cand = len(cands.entries)

        # fixed base susceptance matrix for the existing branches
        self.b_base = np.zeros((self.n_bus, self.n_bus))
        for i, j, b in ex:
            self.b_base[i, i] += b
            self.b_base[j, j] += b
            self.b_base[i, j] -= b
            self.b_base[j, i] -= b

        # flow-matrix layout
        self.n_gen = len(net.generators)
        self.size = 1 + self.n_gen + self.n_bus + 2
        self.gen0 = 1
        self.bus0 = 1 + self.n_gen
        self.exp_col = 1 + self.n_gen + self.n_bus
        self.gen_slot = np.array(
            [k for k, g in enumerate(net.generators) if g.in_service], dtype=int
        )

        self.t_static = np.zeros((self.size, self.size))
        for i in range(self.n_bus):
            self.t_static[self.bus0 + i, self.exp_col] = self.loads[i]

    # -- forward model -------------------------------------------------

    def solve_angles(self, p_gen: np.ndarray, alpha: np.ndarray):
        b_full = self.b_base.copy()
        for k in range(self.n_cand):
            ab = alpha[k] * self.cd_b[k]
            i, j = self.cd_i[k], self.cd_j[k]
            b_full[i, i] += ab
            b_full[j, j] += ab
            b_full[i, j] -= ab
            b_full[j, i] -= ab
        p_inj = -self.loads.copy()
        np.add.at(p_inj, self.gen_bus, p_gen)
        p_inj /= self.base
        b_red = b_full[np.ix_(self.keep, self.keep)]
        theta = np.zeros(self.n_bus)
        theta[self.keep] = np.linalg.solve(b_red, p_inj[self.keep])
        return theta, b_red

    def flows_mw(self, theta: np.ndarray, alpha: np.ndarray):
        f_ex = self.ex_b * (theta[self.ex_i] - theta[self.ex_j]) * self.base
        f_cd = alpha * self.cd_b * (theta[self.cd_i] - theta[self.cd_j]) * self.base
        return f_ex, f_cd

    def assemble(self, p_gen: np.ndarray, f_ex: np.ndarray, f_cd: np.ndarray):
        t = self.t_static.copy()
        for slot, p in zip(self.gen_slot, p_gen):
            p = max(p, 0.0)
            t[0, self.gen0 + slot] = p
            t[self.gen0 + slot, self.bus0 + self.gen_bus_of_slot(slot)] = p
        for i, j, f in zip(self.ex_i, self.ex_j, f_ex):
            if f >= 0:
                t[self.bus0 + i, self.bus0 + j] += f
            else:
                t[self.bus0 + j, self.bus0 + i] -= f
        for i, j, f in zip(self.cd_i, self.cd_j, f_cd):
            if f >= 0:
                t[self.bus0 + i, self.bus0 + j] += f
            else:
                t[self.bus0 + j, self.bus0 + i] -= f
        return t

    def gen_bus_of_slot(self, slot: int) -> int:
        return self.net.bus_index[self.net.generators[slot].bus]

    def objective(self, p_gen: np.ndarray, alpha: np.ndarray) -> float:
        theta, _ = self.solve_angles(p_gen, alpha)
        f_ex, f_cd = self.flows_mw(theta, alpha)
        t = self.assemble(p_gen, f_ex, f_cd)
        return eco_metrics_relaxed(t, self.order).r_eco

    def objective_and_gradient(self, p_gen: np.ndarray, alpha: np.ndarray):
        theta, b_red = self.solve_angles(p_gen, alpha)
        f_ex, f_cd = self.flows_mw(theta, alpha)
        t = self.assemble(p_gen, f_ex, f_cd)
        value = eco_metrics_relaxed(t, self.order).r_eco
        g = eco_gradient(t, relaxed=True, order=self.order)

        # generators: direct import-row and gen-to-bus cells
        d_pgen = np.array(
            [g[0, self.gen0 + slot] + g[self.gen0 + slot, self.bus0 + self.gen_bus_of_slot(slot)]
             for slot in self.gen_slot]
        )

        # branch flows: dF/dflow via the oriented magnitude cell
        def flow_grad(i_arr, j_arr, f_arr):
            d = np.zeros(len(f_arr))
            for k, (i, j, f) in enumerate(zip(i_arr, j_arr, f_arr)):
                if f >= 0:
                    d[k] = g[self.bus0 + i, self.bus0 + j]
                else:
                    d[k] = -g[self.bus0 + j, self.bus0 + i]
            return d

        d_fex = flow_grad(self.ex_i, self.ex_j, f_ex)
        d_fcd = flow_grad(self.cd_i, self.cd_j, f_cd)

        # adjoint through the angle solve
        u = np.zeros(self.n_bus)
        np.add.at(u, self.ex_i, d_fex * self.ex_b * self.base)
        np.add.at(u, self.ex_j, -d_fex * self.ex_b * self.base)
        np.add.at(u, self.cd_i, d_fcd * alpha * self.cd_b * self.base)
        np.add.at(u, self.cd_j, -d_fcd * alpha * self.cd_b * self.base)
        lam = np.zeros(self.n_bus)
        lam[self.keep] = np.linalg.solve(b_red, u[self.keep])

        d_pgen = d_pgen + lam[self.gen_bus] / self.base

        dtheta_c = theta[self.cd_i] - theta[self.cd_j]
        dlam_c = lam[self.cd_i] - lam[self.cd_j]
        d_alpha = d_fcd * self.cd_b * dtheta_c * self.base - self.cd_b * dlam_c * dtheta_c
        return value, d_pgen, d_alpha


def _project_dispatch(q: np.ndarray, lo: np.ndarray, hi: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {lo <= p <= hi, sum(p) = total}."""
    if total < lo.sum() - 1e-9 or total > hi.sum() + 1e-9:
        raise ValueError("dispatch target outside generator capability")
    span = float(np.max(hi - lo)) + abs(total) + float(np.max(np.abs(q))) + 1.0
    nu_lo, nu_hi = -span * 2, span * 2
    for _ in range(200):
        nu = 0.5 * (nu_lo + nu_hi)
        s = np.clip(q + nu, lo, hi).sum()
        if s < total:
            nu_lo = nu
        else:
            nu_hi = nu
    return np.clip(q + 0.5 * (nu_lo + nu_hi), lo, hi)


def relaxed_subproblem(
    model: _DcModel,
    alpha_lo: np.ndarray,
    alpha_hi: np.ndarray,
    p_start: np.ndarray | None = None,
    tolerance: float = 1e-7,
    max_iter: int = 400,
) -> SubproblemResult:
    """Projected gradient ascent on the relaxed robustness objective over
    {generator boxes, total-generation balance, decision boxes}.

    Returns the best stationary point found; ``kkt_residual`` is the
    infinity norm of the unit-step projected gradient.
    """
    total = model.loads.sum()
    lo, hi = model.p_min, model.p_max
    if total < lo.sum() - 1e-9 or total > hi.sum() + 1e-9:
        raise ValueError("infeasible base dispatch: load outside total generation limits")

    setpoints = np.array([g.p_set for g in model.gens])
    starts = []
    base_start = _project_dispatch(
        setpoints * (total / setpoints.sum()) if setpoints.sum() > 0 else setpoints,
        lo, hi, total,
    )
    starts.append(base_start)
    if p_start is not None:
        starts.insert(0, _project_dispatch(p_start, lo, hi, total))
    cap_start = _project_dispatch(hi * (total / hi.sum()), lo, hi, total)
    starts.append(cap_start)

    best = None
    for p0 in starts:
        alpha = 0.5 * (alpha_lo + alpha_hi)
        p = p0.copy()
        # characteristic scales keep the two variable groups comparable
        p_scale = max(total / max(len(p), 1), 1.0)
        step = 1.0
        value, gp, ga = model.objective_and_gradient(p, alpha)
        kkt = np.inf
        for _it in range(max_iter):
            moved = False
            for trial in range(30):
                p_new = _project_dispatch(p + step * gp * p_scale**2, lo, hi, total)
                a_new = np.clip(alpha + step * ga, alpha_lo, alpha_hi)
                v_new = model.objective(p_new, a_new)
                if v_new > value + 1e-14:
                    moved = True
                    break
                step *= 0.5
                if step < 1e-12:
                    break
            if not moved:
                break
            p, alpha, value = p_new, a_new, v_new
            value, gp, ga = model.objective_and_gradient(p, alpha)
            step = min(step * 2.0, 1e3)
            p_kkt = _project_dispatch(p + gp * p_scale**2, lo, hi, total) - p
            a_kkt = np.clip(alpha + ga, alpha_lo, alpha_hi) - alpha
            kkt = max(
                float(np.max(np.abs(p_kkt)) / p_scale**2) if p_kkt.size else 0.0,
                float(np.max(np.abs(a_kkt))) if a_kkt.size else 0.0,
            )
            if kkt < tolerance:
                break
        converged = kkt < max(tolerance, 1e-5) or _it == 0
        cand = SubproblemResult(
            value=value, p_gen=p, alpha=alpha, kkt_residual=float(kkt), converged=converged
        )
        if best is None or cand.value > best.value:
            best = cand
    return best


@dataclass
class _Node:
    node_id: int
    parent: int
    fixed: dict[int, int]
    bound: float


def _leaf_value(model: _DcModel, decisions: np.ndarray, prob: ExpansionProblem) -> SubproblemResult:
    lo = decisions.astype(float)
    return relaxed_subproblem(
        model, lo, lo.copy(), tolerance=prob.nlp_tolerance, max_iter=prob.nlp_max_iter
    )


def solve_expansion(prob: ExpansionProblem) -> ExpansionResult:
    """Branch-and-bound over candidate build decisions.

    Bounds come from the continuous relaxation of the free decisions;
    nodes whose relaxation fails inherit the parent bound rather than
    being discarded.  Branching picks the most fractional decision (ties
    to the lowest candidate id), depth first with a best-bound reorder of
    the frontier every 64 nodes.
    """
    t0 = time.perf_counter()
    prob.cands.check_against(prob.net)
    model = _DcModel(prob.net, prob.cands, prob.order)
    n_cand = model.n_cand

    if model.loads.sum() > model.p_max.sum() + 1e-9:
        return ExpansionResult(
            decisions=(), dispatch=solve_dc(prob.net), solved_r_eco=float("nan"),
            achieved_r_eco_structure=float("nan"), achieved_r_eco_opf=float("nan"),
            status="infeasible", nodes_explored=0, wall_time=time.perf_counter() - t0,
        )

    # All-zeros is always feasible; seed the incumbent with it.
    zero = np.zeros(n_cand, dtype=int)
    inc_sub = _leaf_value(model, zero, prob)
    incumbent = (zero.copy(), inc_sub)
    log: list[dict] = []

    if n_cand == 0:
        dispatch, achieved_structure = evaluate_decisions(prob.net, prob.cands, (), "structure")
        _, achieved_opf = evaluate_decisions(prob.net, prob.cands, (), "opf")
        return ExpansionResult(
            decisions=(), dispatch=dispatch, solved_r_eco=inc_sub.value,
            achieved_r_eco_structure=achieved_structure, achieved_r_eco_opf=achieved_opf,
            status="optimal-within-budget", nodes_explored=1,
            wall_time=time.perf_counter() - t0, search_log=tuple(log),
        )

    stack: list[_Node] = [_Node(node_id=0, parent=-1, fixed={}, bound=float("inf"))]
    next_id = 1
    nodes_explored = 0
    exhausted = True

    while stack:
        if nodes_explored >= prob.node_budget or (
            prob.time_budget is not None and time.perf_counter() - t0 > prob.time_budget
        ):
            exhausted = False
            break
        if nodes_explored and nodes_explored % 64 == 0:
            stack.sort(key=lambda nd: nd.bound)  # best bound to the stack top

        node = stack.pop()
        nodes_explored += 1
        if node.bound <= incumbent[1].value + 1e-9:
            log.append(_log_rec(node, n_cand, None, incumbent[1].value, pruned=True))
            continue

        alpha_lo = np.zeros(n_cand)
        alpha_hi = np.ones(n_cand)
        for k, v in node.fixed.items():
            alpha_lo[k] = alpha_hi[k] = float(v)

        try:
            sub = relaxed_subproblem(
                model, alpha_lo, alpha_hi,
                tolerance=prob.nlp_tolerance, max_iter=prob.nlp_max_iter,
            )
            bound = min(node.bound, sub.value)
        except (ValueError, np.linalg.LinAlgError):
            sub = None
            bound = node.bound  # restoration failed: keep the parent bound

        log.append(_log_rec(node, n_cand, bound, incumbent[1].value, pruned=False))

        if bound <= incumbent[1].value + 1e-9:
            continue

        if sub is not None:
            frac = np.abs(sub.alpha - np.round(sub.alpha))
            if np.all(frac <= 1e-6):
                decisions = np.round(sub.alpha).astype(int)
                leaf = _leaf_value(model, decisions, prob)
                if leaf.value > incumbent[1].value + 1e-12:
                    incumbent = (decisions, leaf)
                continue
            branch_k = int(np.argmax(np.where(frac > 1e-6, frac, -1.0)))
        else:
            free = [k for k in range(n_cand) if k not in node.fixed]
            if not free:
                continue
            branch_k = free[0]

        for v in (0, 1):  # the 1-branch is explored first (pushed last)
            fixed = dict(node.fixed)
            fixed[branch_k] = v
            stack.append(_Node(node_id=next_id, parent=node.node_id, fixed=fixed, bound=bound))
            next_id += 1

    best_dec, best_sub = incumbent
    decisions = tuple(int(d) for d in best_dec)
    dispatch, achieved_structure = evaluate_decisions(prob.net, prob.cands, decisions, "structure")
    dispatch_opf, achieved_opf = evaluate_decisions(prob.net, prob.cands, decisions, "opf")
    result_dispatch = dispatch_opf if prob.mode == "opf" else dispatch

    return ExpansionResult(
        decisions=decisions,
        dispatch=result_dispatch,
        solved_r_eco=best_sub.value,
        achieved_r_eco_structure=achieved_structure,
        achieved_r_eco_opf=achieved_opf,
        status="optimal-within-budget" if exhausted else "incumbent-only",
        nodes_explored=nodes_explored,
        wall_time=time.perf_counter() - t0,
        search_log=tuple(log),
    )


def _log_rec(node: _Node, n_cand: int, bound, incumbent_value: float, pruned: bool) -> dict:
    return {
        "node_id": node.node_id,
        "parent": node.parent,
        "fixed": len(node.fixed),
        "free": n_cand - len(node.fixed),
        "bound": None if bound is None else round(float(min(node.bound, bound)), 12),
        "incumbent": round(float(incumbent_value), 12),
        "pruned": pruned,
    }


def evaluate_decisions(
    net: Network,
    cands: CandidateSet,
    decisions,
    mode: str,
    slack_only_rebalance: bool = False,
) -> tuple[FlowSolution, float]:
    """Exact robustness of a decision vector under DC flows.

    ``structure`` keeps the original setpoints (proportionally rescaled
    to balance, or slack-absorbed when ``slack_only_rebalance``);
    ``opf`` re-optimizes the dispatch with the decisions fixed.
    """
    if mode not in ("structure", "opf"):
        raise ValueError(f"unknown mode {mode!r}")
    applied = apply_decisions(net, cands.with_decisions(decisions) if decisions else cands)

    if mode == "structure":
        if not slack_only_rebalance:
            total_load = sum(b.p_load for b in applied.buses)
            total_set = sum(g.p_set for g in applied.generators if g.in_service)
            if total_set > 0:
                factor = total_load / total_set
                gens = tuple(
                    replace(g, p_set=g.p_set * factor) if g.in_service else g
                    for g in applied.generators
                )
                applied = replace(applied, generators=gens)
        sol = solve_dc(applied)
    else:
        model = _DcModel(applied, CandidateSet(entries=()), order=1)
        sub = relaxed_subproblem(model, np.zeros(0), np.zeros(0))
        slots = [k for k, g in enumerate(applied.generators) if g.in_service]
        gens = list(applied.generators)
        for slot, p in zip(slots, sub.p_gen):
            gens[slot] = replace(gens[slot], p_set=float(p))
        applied = replace(applied, generators=tuple(gens))
        sol = solve_dc(applied)

    r = eco_metrics_exact(build_efm(applied, sol)).r_eco
    return sol, r
