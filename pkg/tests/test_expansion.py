"""Expansion solver: subproblem gradients, oracles and search invariants."""

import itertools
import json

import numpy as np
import pytest

from ecogrid import (
    CandidateBranch,
    CandidateSet,
    ExpansionProblem,
    build_efm,
    eco_metrics_exact,
    evaluate_decisions,
    solve_dc,
    solve_expansion,
)
from ecogrid.expansion import _DcModel, _leaf_value, _project_dispatch, relaxed_subproblem
from conftest import random_ring_instance


def chord_candidates(pairs, x_values):
    return CandidateSet(
        entries=tuple(
            CandidateBranch(id=k + 1, from_bus=a, to_bus=b, r=0.01, x=x,
                            b_charging=0.0, s_max=None, tap_ratio=1.0)
            for k, ((a, b), x) in enumerate(zip(pairs, x_values))
        ),
        provenance="test",
    )


@pytest.fixture()
def ring5_cands(ring5):
    return chord_candidates([(1, 3), (2, 4), (2, 5)], [0.10, 0.12, 0.09])


def test_projection_onto_balanced_box():
    lo = np.array([0.0, 10.0, 0.0])
    hi = np.array([50.0, 60.0, 40.0])
    p = _project_dispatch(np.array([100.0, 0.0, 20.0]), lo, hi, 90.0)
    assert p.sum() == pytest.approx(90.0, abs=1e-6)
    assert np.all(p >= lo - 1e-9) and np.all(p <= hi + 1e-9)
    # projection of a feasible point is itself
    feasible = np.array([40.0, 30.0, 20.0])
    np.testing.assert_allclose(_project_dispatch(feasible, lo, hi, 90.0),
                               feasible, atol=1e-6)


def test_projection_infeasible_total_rejected():
    lo = np.zeros(2)
    hi = np.array([10.0, 10.0])
    with pytest.raises(ValueError):
        _project_dispatch(np.zeros(2), lo, hi, 30.0)


def test_subproblem_gradient_matches_finite_differences(ring5, ring5_cands):
    model = _DcModel(ring5, ring5_cands, order=1)
    rng = np.random.default_rng(7)
    p = model.p_min + rng.random(len(model.p_min)) * (model.p_max - model.p_min)
    alpha = rng.random(model.n_cand) * 0.8 + 0.1
    _, gp, ga = model.objective_and_gradient(p, alpha)
    eps = 1e-6
    for k in range(len(p)):
        up, dn = p.copy(), p.copy()
        up[k] += eps
        dn[k] -= eps
        fd = (model.objective(up, alpha) - model.objective(dn, alpha)) / (2 * eps)
        assert gp[k] == pytest.approx(fd, rel=1e-4, abs=1e-10)
    for k in range(len(alpha)):
        up, dn = alpha.copy(), alpha.copy()
        up[k] += eps
        dn[k] -= eps
        fd = (model.objective(p, up) - model.objective(p, dn)) / (2 * eps)
        assert ga[k] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_dispatch_only_subproblem_matches_grid_search(two_bus):
    """Two generators at the slack bus: scan the single free dispatch
    dimension densely and compare with the gradient-ascent optimum."""
    import dataclasses
    net = dataclasses.replace(
        two_bus,
        generators=(
            dataclasses.replace(two_bus.generators[0], p_max=80.0, p_set=60.0),
            dataclasses.replace(two_bus.generators[0], bus=2, p_max=80.0, p_set=40.0),
        ),
    )
    model = _DcModel(net, CandidateSet(entries=()), order=1)
    sub = relaxed_subproblem(model, np.zeros(0), np.zeros(0))
    grid = [model.objective(np.array([p1, 100.0 - p1]), np.zeros(0))
            for p1 in np.linspace(20.0, 80.0, 2001)]
    assert sub.value == pytest.approx(max(grid), abs=1e-4)


def test_single_free_decision_lands_on_boundary(two_bus):
    import dataclasses
    # third bus so the candidate is a genuine new path
    net = dataclasses.replace(
        two_bus,
        buses=two_bus.buses + (dataclasses.replace(two_bus.buses[1], id=3, p_load=50.0),),
        branches=two_bus.branches + (
            dataclasses.replace(two_bus.branches[0], from_bus=2, to_bus=3),),
    )
    cands = chord_candidates([(1, 3)], [0.1])
    model = _DcModel(net, cands, order=1)
    sub = relaxed_subproblem(model, np.zeros(1), np.ones(1))
    assert min(abs(sub.alpha[0]), abs(sub.alpha[0] - 1.0)) < 1e-5


def test_symmetric_candidates_give_symmetric_value(triangle):
    import dataclasses
    net = dataclasses.replace(
        triangle,
        buses=triangle.buses + (
            dataclasses.replace(triangle.buses[1], id=4, p_load=0.0),
            dataclasses.replace(triangle.buses[1], id=5, p_load=0.0),
        ),
        branches=triangle.branches + (
            dataclasses.replace(triangle.branches[0], from_bus=2, to_bus=4),
            dataclasses.replace(triangle.branches[0], from_bus=3, to_bus=5),
        ),
    )
    a = chord_candidates([(1, 4), (1, 5)], [0.15, 0.15])
    b = chord_candidates([(1, 5), (1, 4)], [0.15, 0.15])
    va = relaxed_subproblem(_DcModel(net, a, 1), np.zeros(2), np.ones(2)).value
    vb = relaxed_subproblem(_DcModel(net, b, 1), np.zeros(2), np.ones(2)).value
    assert va == pytest.approx(vb, abs=1e-8)


def test_zero_candidates_identity(ring5):
    prob = ExpansionProblem(net=ring5, cands=CandidateSet(entries=()))
    result = solve_expansion(prob)
    assert result.decisions == ()
    assert result.status == "optimal-within-budget"
    base = eco_metrics_exact(build_efm(ring5, solve_dc(ring5))).r_eco
    assert result.achieved_r_eco_structure == pytest.approx(base, abs=1e-9)


def test_bb_matches_enumeration_small(ring5, ring5_cands):
    prob = ExpansionProblem(net=ring5, cands=ring5_cands, node_budget=1000)
    result = solve_expansion(prob)
    model = _DcModel(ring5, ring5_cands, order=1)
    best = max(
        _leaf_value(model, np.array(d), prob).value
        for d in itertools.product([0, 1], repeat=3)
    )
    assert result.solved_r_eco == pytest.approx(best, abs=1e-6)
    assert result.status == "optimal-within-budget"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bb_matches_enumeration_random(seed):
    rng = np.random.default_rng(seed)
    net, cands = random_ring_instance(rng, n_bus=5, n_cand=4)
    prob = ExpansionProblem(net=net, cands=cands, node_budget=2000)
    result = solve_expansion(prob)
    model = _DcModel(net, cands, order=1)
    best = max(
        _leaf_value(model, np.array(d), prob).value
        for d in itertools.product([0, 1], repeat=len(cands.entries))
    )
    assert result.solved_r_eco == pytest.approx(best, abs=1e-6)


def test_incumbent_never_below_base(ring5, ring5_cands):
    result = solve_expansion(ExpansionProblem(net=ring5, cands=ring5_cands))
    base = eco_metrics_exact(build_efm(ring5, solve_dc(ring5))).r_eco
    assert result.achieved_r_eco_structure >= base - 1e-9


def test_bound_monotone_down_the_tree(ring5, ring5_cands):
    result = solve_expansion(ExpansionProblem(net=ring5, cands=ring5_cands))
    records = {r["node_id"]: r for r in result.search_log}
    for rec in result.search_log:
        parent = records.get(rec["parent"])
        if parent is None or parent["bound"] is None or rec["bound"] is None:
            continue
        assert rec["bound"] <= parent["bound"] + 1e-9


def test_search_log_is_valid_ndjson(ring5, ring5_cands):
    result = solve_expansion(ExpansionProblem(net=ring5, cands=ring5_cands))
    lines = result.search_log_ndjson().strip().splitlines()
    assert len(lines) == len(result.search_log)
    for line in lines:
        rec = json.loads(line)
        assert {"node_id", "parent", "bound", "incumbent", "pruned"} <= set(rec)


def test_dispatch_feasibility_of_result(ring5, ring5_cands):
    result = solve_expansion(ExpansionProblem(net=ring5, cands=ring5_cands, mode="opf"))
    sol = result.dispatch
    for k, g in enumerate(ring5.generators):
        assert g.p_min - 1e-6 <= sol.p_gen[k] <= g.p_max + 1e-6
    load = sum(b.p_load for b in ring5.buses)
    assert sol.p_gen.sum() == pytest.approx(load, abs=1e-9 * ring5.base_mva)


def test_infeasible_when_capacity_short(ring5):
    import dataclasses
    weak = dataclasses.replace(
        ring5,
        generators=tuple(dataclasses.replace(g, p_max=10.0, p_set=10.0)
                         for g in ring5.generators),
    )
    result = solve_expansion(ExpansionProblem(net=weak, cands=CandidateSet(entries=())))
    assert result.status == "infeasible"


def test_evaluate_decisions_structure_identity(ring5):
    sol, r = evaluate_decisions(ring5, CandidateSet(entries=()), (), "structure")
    base = eco_metrics_exact(build_efm(ring5, solve_dc(ring5))).r_eco
    assert r == pytest.approx(base, abs=1e-9)


def test_evaluate_decisions_matches_manual_pipeline(ring5, ring5_cands):
    from ecogrid import apply_decisions
    decisions = (1, 0, 1)
    _, r = evaluate_decisions(ring5, ring5_cands, decisions, "structure")
    expanded = apply_decisions(ring5, ring5_cands.with_decisions(decisions))
    # structure mode rescales setpoints to balance before solving
    total_load = sum(b.p_load for b in expanded.buses)
    total_set = sum(g.p_set for g in expanded.generators)
    import dataclasses
    scaled = dataclasses.replace(
        expanded,
        generators=tuple(
            dataclasses.replace(g, p_set=g.p_set * total_load / total_set)
            for g in expanded.generators
        ),
    )
    manual = eco_metrics_exact(build_efm(scaled, solve_dc(scaled))).r_eco
    assert r == pytest.approx(manual, abs=1e-12)


def test_opf_mode_differs_from_structure(ring5, ring5_cands):
    decisions = (1, 0, 1)
    _, r_structure = evaluate_decisions(ring5, ring5_cands, decisions, "structure")
    _, r_opf = evaluate_decisions(ring5, ring5_cands, decisions, "opf")
    assert r_opf >= r_structure - 1e-6
    assert r_opf != pytest.approx(r_structure, abs=1e-9)


def test_determinism(ring5, ring5_cands):
    prob = ExpansionProblem(net=ring5, cands=ring5_cands)
    a = solve_expansion(prob)
    b = solve_expansion(prob)
    assert a.decisions == b.decisions
    assert a.solved_r_eco == b.solved_r_eco
    assert a.to_json() == b.to_json()
    assert a.search_log_ndjson() == b.search_log_ndjson()
