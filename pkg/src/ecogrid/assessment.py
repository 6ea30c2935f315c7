"""Network evaluation: N-x contingencies, cascading-failure robustness,
graph-structure metrics and the links-vs-robustness exploration."""

from __future__ import annotations

import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import networkx as nx
import numpy as np

from .eco_flow import build_efm, eco_metrics_exact
from .grid_model import Branch, Network
from .power_flow import FlowSolution, IslandedNetworkError, solve_ac, solve_dc

__all__ = [
    "ContingencySpec",
    "ContingencyCase",
    "ContingencyReport",
    "NetworkProperties",
    "run_contingencies",
    "r_cf",
    "graph_properties",
    "explore_topologies",
    "TopologySample",
    "topology_samples_csv",
]


@dataclass(frozen=True)
class ContingencySpec:
    """What to outage and how strictly to judge the post-outage state."""

    depth: int = 1
    element_kind: str = "branch"  # "branch" | "substation" | "explicit-list"
    explicit_sets: tuple[tuple[int, ...], ...] = ()
    flow_tolerance: float = 0.0  # fractional slack on s_max
    voltage_tolerance: float = 0.0  # absolute slack on the pu band

    def __post_init__(self) -> None:
        if self.element_kind not in ("branch", "substation", "explicit-list"):
            raise ValueError(f"unknown element_kind {self.element_kind!r}")
        if self.element_kind != "explicit-list" and self.depth not in (1, 2, 3):
            raise ValueError("depth must be 1, 2 or 3")


@dataclass(frozen=True)
class ContingencyCase:
    outage: tuple[int, ...]
    violations: int
    violated_elements: tuple[tuple[str, str], ...]  # (kind, element label)
    unsolved: bool


@dataclass(frozen=True)
class ContingencyReport:
    total_cases: int
    violations: int
    unsolved: int
    cases: tuple[ContingencyCase, ...]

    @property
    def normalized_violations(self) -> float:
        return self.violations / self.total_cases if self.total_cases else 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "total_cases": self.total_cases,
                "violations": self.violations,
                "unsolved": self.unsolved,
                "normalized_violations": self.normalized_violations,
            },
            sort_keys=True,
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("outage,violations,unsolved,violated_elements\n")
        for c in self.cases:
            elems = ";".join(f"{k}:{e}" for k, e in c.violated_elements)
            buf.write(f"{'+'.join(map(str, c.outage))},{c.violations},{int(c.unsolved)},{elems}\n")
        return buf.getvalue()


def _outage_branch(net: Network, branch_positions: tuple[int, ...]) -> Network:
    new_branches = tuple(
        replace(br, in_service=False) if k in branch_positions else br
        for k, br in enumerate(net.branches)
    )
    return replace(net, branches=new_branches)


def _outage_substation(net: Network, bus_ids: tuple[int, ...]) -> Network | None:
    """Remove buses with all incident branches, generators and load.
    Returns None when the slack bus is among the removed (unsolvable)."""
    gone = set(bus_ids)
    if net.slack_bus in gone:
        return None
    buses = tuple(b for b in net.buses if b.id not in gone)
    branches = tuple(
        br for br in net.branches if br.from_bus not in gone and br.to_bus not in gone
    )
    gens = tuple(g for g in net.generators if g.bus not in gone)
    return replace(net, buses=buses, branches=branches, generators=gens)


def _count_violations(net: Network, sol: FlowSolution, spec: ContingencySpec):
    """One violation per out-of-limit element: branch apparent power over
    s_max, or bus voltage out of its [v_min, v_max] band."""
    violated = []
    for k, br in enumerate(net.branches):
        if not br.in_service or br.s_max is None:
            continue
        s_from = math.hypot(sol.p_flow[k], sol.q_flow[k])
        s_to = math.hypot(sol.p_flow_recv[k], sol.q_flow_recv[k])
        if max(s_from, s_to) > br.s_max * (1.0 + spec.flow_tolerance):
            violated.append(("flow-over-limit", f"{br.from_bus}-{br.to_bus}#{k}"))
    for i, bus in enumerate(net.buses):
        if sol.v[i] > bus.v_max + spec.voltage_tolerance or sol.v[i] < bus.v_min - spec.voltage_tolerance:
            violated.append(("voltage-out-of-band", f"bus{bus.id}"))
    return violated


def _case_for_outage(net: Network, spec: ContingencySpec, outage: tuple[int, ...]) -> ContingencyCase:
    if spec.element_kind == "substation":
        out_net = _outage_substation(net, outage)
    else:
        out_net = _outage_branch(net, outage)
    case_unsolved = False
    violated = ()
    if out_net is None:
        case_unsolved = True
    else:
        try:
            sol = solve_ac(out_net)
        except IslandedNetworkError:
            case_unsolved = True
        else:
            if not sol.converged:
                case_unsolved = True
            else:
                violated = tuple(_count_violations(out_net, sol, spec))
    return ContingencyCase(
        outage=tuple(outage),
        violations=len(violated),
        violated_elements=violated,
        unsolved=case_unsolved,
    )


def run_contingencies(net: Network, spec: ContingencySpec, jobs: int = 1) -> ContingencyReport:
    """AC-solve every outage set of the requested depth and count
    violations; failures to solve are counted, never raised.

    ``jobs`` > 1 fans cases out to worker processes; the report is
    ordered by outage set regardless of jobs."""
    if spec.element_kind == "branch":
        elements = [k for k, br in enumerate(net.branches) if br.in_service]
        combos = list(itertools.combinations(elements, spec.depth))
    elif spec.element_kind == "substation":
        elements = [b.id for b in net.buses]
        combos = list(itertools.combinations(elements, spec.depth))
    else:
        known_branches = range(len(net.branches))
        for s in spec.explicit_sets:
            for e in s:
                if e not in known_branches:
                    raise ValueError(f"explicit outage references unknown branch index {e}")
        combos = [tuple(s) for s in spec.explicit_sets]

    if jobs > 1 and len(combos) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cases = list(
                pool.map(_case_for_outage, itertools.repeat(net), itertools.repeat(spec),
                         combos, chunksize=max(1, len(combos) // (4 * jobs)))
            )
    else:
        cases = [_case_for_outage(net, spec, outage) for outage in combos]

    return ContingencyReport(
        total_cases=len(cases),
        violations=sum(c.violations for c in cases),
        unsolved=sum(c.unsolved for c in cases),
        cases=tuple(cases),
    )


def r_cf(net: Network, sol: FlowSolution) -> float:
    """Entropy-based cascading-failure robustness index.

    Per node: normalized out-going real-power flows weighted by inverse
    loading level give a nodal entropy (base-10 logs); nodes are weighted
    by their share of distributed power (out-going flow plus own load).
    Invariant to uniform scaling of all flows and all capacities.
    """
    idx = net.bus_index
    n = len(net.buses)
    out_lines: list[list[tuple[float, float]]] = [[] for _ in range(n)]
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        if br.s_max is None or br.s_max <= 0:
            raise ValueError(f"branch {br.from_bus}-{br.to_bus}: positive capacity required")
        f = abs(sol.p_flow[k])
        loading = f / br.s_max
        sender = idx[br.from_bus] if sol.p_flow[k] >= 0 else idx[br.to_bus]
        out_lines[sender].append((f, loading))

    out_total = np.array([sum(f for f, _ in lines) for lines in out_lines])
    nodal = np.zeros(n)
    for i, lines in enumerate(out_lines):
        if out_total[i] <= 0:
            continue  # sink node: empty entropy sum
        for f, loading in lines:
            p = f / out_total[i]
            if p > 0 and loading > 0:
                nodal[i] -= (1.0 / loading) * p * math.log10(p)

    distributed = out_total + np.array([b.p_load for b in net.buses])
    weights = distributed / distributed.sum()
    return float(np.dot(nodal, weights))


@dataclass(frozen=True)
class NetworkProperties:
    r_cf: float
    avg_degree: float
    clustering: float
    avg_betweenness: float
    avg_shortest_path: float
    mean_flow_mw: float
    std_flow_mw: float
    mean_loading_pct: float
    std_loading_pct: float
    connected: bool = True

    def as_row(self) -> dict:
        return {
            "r_cf": self.r_cf,
            "d_bar": self.avg_degree,
            "c_bar": self.clustering,
            "b_bar": self.avg_betweenness,
            "l_bar": self.avg_shortest_path,
            "mean_pf": self.mean_flow_mw,
            "std_pf": self.std_flow_mw,
            "mean_pct": self.mean_loading_pct,
            "std_pct": self.std_loading_pct,
        }


def graph_properties(net: Network, sol: FlowSolution) -> NetworkProperties:
    """Structure metrics on the undirected simple bus graph plus flow
    distribution statistics from the solved operating point."""
    graph = nx.Graph()
    graph.add_nodes_from(b.id for b in net.buses)
    graph.add_edges_from(
        (br.from_bus, br.to_bus) for br in net.branches if br.in_service
    )
    n = graph.number_of_nodes()
    avg_degree = 2.0 * graph.number_of_edges() / n
    clustering = nx.average_clustering(graph)
    betweenness = float(np.mean(list(nx.betweenness_centrality(graph).values())))
    connected = nx.is_connected(graph)
    if connected:
        avg_path = nx.average_shortest_path_length(graph)
    else:
        giant = graph.subgraph(max(nx.connected_components(graph), key=len))
        avg_path = nx.average_shortest_path_length(giant)

    in_service = [k for k, br in enumerate(net.branches) if br.in_service]
    flows = np.abs(sol.p_flow[in_service])
    s_mag = np.hypot(sol.p_flow[in_service], sol.q_flow[in_service])
    caps = np.array(
        [net.branches[k].s_max if net.branches[k].s_max is not None else np.nan
         for k in in_service]
    )
    with np.errstate(invalid="ignore"):
        pct = s_mag / caps * 100.0
    pct = pct[~np.isnan(pct)]

    return NetworkProperties(
        r_cf=r_cf(net, sol),
        avg_degree=avg_degree,
        clustering=clustering,
        avg_betweenness=betweenness,
        avg_shortest_path=avg_path,
        mean_flow_mw=float(flows.mean()) if flows.size else 0.0,
        std_flow_mw=float(flows.std()) if flows.size else 0.0,
        mean_loading_pct=float(pct.mean()) if pct.size else 0.0,
        std_loading_pct=float(pct.std()) if pct.size else 0.0,
        connected=connected,
    )


@dataclass(frozen=True)
class TopologySample:
    k_links: int
    structure_id: int
    added_pairs: tuple[tuple[int, int], ...]
    r_eco: float


def _mean_parameter_branch(net: Network, pair: tuple[int, int]) -> Branch:
    in_service = [br for br in net.branches if br.in_service]
    r = float(np.mean([br.r for br in in_service]))
    x = float(np.mean([br.x for br in in_service]))
    b = float(np.mean([br.b_charging for br in in_service]))
    rated = [br.s_max for br in in_service if br.s_max is not None]
    s_max = float(np.mean(rated)) if rated else None
    return Branch(from_bus=pair[0], to_bus=pair[1], r=r, x=x, b_charging=b, s_max=s_max)


def explore_topologies(
    net: Network,
    k_links: int,
    sample_budget: int = 150,
    seed: int = 0,
) -> list[TopologySample]:
    """Robustness of every (or a sampled subset of) way to add up to
    ``k_links`` new bus-pair links with mean-parameter branches.

    Structure counts within the budget are enumerated exhaustively;
    larger spaces are sampled uniformly without replacement.  The k=0
    base point is always included.
    """
    if k_links < 0:
        raise ValueError("k_links must be >= 0")
    existing = {
        (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
        for br in net.branches
        if br.in_service
    }
    bus_ids = [b.id for b in net.buses]
    free_pairs = [
        (a, b)
        for a, b in itertools.combinations(sorted(bus_ids), 2)
        if (a, b) not in existing
    ]

    rng = np.random.default_rng(seed)
    samples: list[TopologySample] = []

    base = eco_metrics_exact(build_efm(net, solve_dc(net))).r_eco
    samples.append(TopologySample(k_links=0, structure_id=0, added_pairs=(), r_eco=base))

    for k in range(1, k_links + 1):
        n_structures = math.comb(len(free_pairs), k)
        if n_structures <= sample_budget:
            chosen = list(itertools.combinations(range(len(free_pairs)), k))
        else:
            picked: set[tuple[int, ...]] = set()
            while len(picked) < sample_budget:
                picked.add(tuple(sorted(rng.choice(len(free_pairs), size=k, replace=False).tolist())))
            chosen = sorted(picked)
        for sid, combo in enumerate(chosen):
            pairs = tuple(free_pairs[i] for i in combo)
            added = tuple(_mean_parameter_branch(net, p) for p in pairs)
            new_net = replace(net, branches=net.branches + added)
            sol = solve_dc(new_net)
            r = eco_metrics_exact(build_efm(new_net, sol)).r_eco
            samples.append(
                TopologySample(k_links=k, structure_id=sid, added_pairs=pairs, r_eco=r)
            )
    return samples


def topology_samples_csv(samples: list[TopologySample]) -> str:
    buf = io.StringIO()
    buf.write("links,structure_id,added_pairs,r_eco\n")
    for s in samples:
        pairs = ";".join(f"{a}-{b}" for a, b in s.added_pairs)
        buf.write(f"{s.k_links},{s.structure_id},{pairs},{s.r_eco:.10f}\n")
    return buf.getvalue()
