"""Ecological-robustness analysis and expansion planning for power
transmission networks.

Pipeline: parse a case (:mod:`grid_model`), solve its power flow
(:mod:`power_flow`), map the operating point to an ecological flow
matrix and robustness metrics (:mod:`eco_flow`), then improve the
network by candidate-branch expansion (:mod:`candidates`,
:mod:`expansion`) and assess the result (:mod:`assessment`).
"""

from .assessment import (
    ContingencyCase,
    ContingencyReport,
    ContingencySpec,
    NetworkProperties,
    TopologySample,
    explore_topologies,
    graph_properties,
    r_cf,
    run_contingencies,
    topology_samples_csv,
)
from .candidates import GenerationSpec, generate_candidates
from .eco_flow import (
    EcoFlowMatrix,
    EcoMetrics,
    build_efm,
    eco_gradient,
    eco_metrics_exact,
    eco_metrics_relaxed,
    log_series,
    log_series_deriv,
    relaxed_outer_robustness,
)
from .expansion import (
    ExpansionProblem,
    ExpansionResult,
    SubproblemResult,
    evaluate_decisions,
    solve_expansion,
)
from .grid_model import (
    Branch,
    Bus,
    CandidateBranch,
    CandidateSet,
    CaseFormatError,
    Generator,
    Network,
    apply_decisions,
    parse_candidates,
    parse_case,
    write_candidates,
    write_case,
)
from .power_flow import (
    AC_MAX_ITER,
    AC_TOLERANCE,
    FlowSolution,
    IslandedNetworkError,
    aggregate_bus_losses,
    solve_ac,
    solve_dc,
)

__version__ = "0.1.0"

__all__ = [
    "AC_MAX_ITER",
    "AC_TOLERANCE",
    "Branch",
    "Bus",
    "CandidateBranch",
    "CandidateSet",
    "CaseFormatError",
    "ContingencyCase",
    "ContingencyReport",
    "ContingencySpec",
    "EcoFlowMatrix",
    "EcoMetrics",
    "ExpansionProblem",
    "ExpansionResult",
    "FlowSolution",
    "GenerationSpec",
    "Generator",
    "IslandedNetworkError",
    "Network",
    "NetworkProperties",
    "SubproblemResult",
    "TopologySample",
    "aggregate_bus_losses",
    "apply_decisions",
    "build_efm",
    "eco_gradient",
    "eco_metrics_exact",
    "eco_metrics_relaxed",
    "evaluate_decisions",
    "explore_topologies",
    "generate_candidates",
    "graph_properties",
    "log_series",
    "log_series_deriv",
    "parse_candidates",
    "parse_case",
    "r_cf",
    "relaxed_outer_robustness",
    "run_contingencies",
    "solve_ac",
    "solve_dc",
    "solve_expansion",
    "topology_samples_csv",
    "write_candidates",
    "write_case",
]
