"""Candidate generation: determinism, scoping and distribution fidelity."""

import numpy as np
import pytest

from ecogrid import (
    GenerationSpec,
    generate_candidates,
    parse_candidates,
    write_candidates,
)


def test_fixed_seed_reproduces_byte_identical_files(rts24):
    spec = GenerationSpec(m=20, seed=42)
    a = write_candidates(generate_candidates(rts24, spec))
    b = write_candidates(generate_candidates(rts24, spec))
    assert a == b


def test_different_seeds_differ(rts24):
    a = generate_candidates(rts24, GenerationSpec(m=20, seed=1))
    b = generate_candidates(rts24, GenerationSpec(m=20, seed=2))
    assert a.entries != b.entries


def test_candidates_connect_same_voltage_level(rts24):
    kv = {b.id: b.voltage_kv for b in rts24.buses}
    for spec in (GenerationSpec(m=30, seed=0, voltage_levels="all"),
                 GenerationSpec(m=30, seed=0)):
        for c in generate_candidates(rts24, spec).entries:
            assert kv[c.from_bus] == kv[c.to_bus]


def test_highest_only_scope(rts24):
    top = max(b.voltage_kv for b in rts24.buses)
    kv = {b.id: b.voltage_kv for b in rts24.buses}
    cands = generate_candidates(rts24, GenerationSpec(m=30, seed=3))
    assert all(kv[c.from_bus] == top for c in cands.entries)


def test_no_duplicate_or_existing_pairs(rts24):
    cands = generate_candidates(rts24, GenerationSpec(m=40, seed=5, voltage_levels="all"))
    pairs = [(min(c.from_bus, c.to_bus), max(c.from_bus, c.to_bus)) for c in cands.entries]
    assert len(pairs) == len(set(pairs))
    existing = {(min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
                for br in rts24.branches if br.in_service}
    assert not set(pairs) & existing


def test_drawn_parameters_positive_where_required(rts24):
    cands = generate_candidates(rts24, GenerationSpec(m=50, seed=11, voltage_levels="all"))
    for c in cands.entries:
        assert c.x > 0
        assert c.r >= 0
        assert c.b_charging >= 0
        assert c.s_max is None or c.s_max > 0
        assert c.tap_ratio == 1.0
        assert c.decision == 0


def test_distribution_tracks_fitted_level(rts24):
    """Many draws at the 230 kV level: sample mean of x within a few
    standard errors of the existing-branch mean."""
    kv = {b.id: b.voltage_kv for b in rts24.buses}
    level = max(kv.values())
    existing_x = [br.x for br in rts24.branches
                  if kv[br.from_bus] == level == kv[br.to_bus]]
    mu = float(np.mean(existing_x))
    sigma = float(np.std(existing_x, ddof=1))
    draws = []
    for seed in range(12):
        cands = generate_candidates(rts24, GenerationSpec(m=30, seed=seed))
        draws.extend(c.x for c in cands.entries)
    stderr = sigma / np.sqrt(len(draws))
    # positivity resampling biases the mean slightly upward; allow for it
    assert abs(np.mean(draws) - mu) < 4 * stderr + 0.05 * mu


def test_m_larger_than_pool_rejected(ring5):
    with pytest.raises(ValueError):
        generate_candidates(ring5, GenerationSpec(m=1000, seed=0, voltage_levels="all"))


def test_generated_set_round_trips(rts24):
    cands = generate_candidates(rts24, GenerationSpec(m=15, seed=9))
    again = parse_candidates(write_candidates(cands))
    for orig, back in zip(cands.entries, again.entries):
        assert back.from_bus == orig.from_bus
        assert back.to_bus == orig.to_bus
        assert back.x == pytest.approx(orig.x, rel=1e-9)
        assert (back.s_max is None) == (orig.s_max is None)


def test_provenance_records_seed(rts24):
    cands = generate_candidates(rts24, GenerationSpec(m=5, seed=77))
    assert "77" in cands.provenance
