"""Shared fixtures: bundled cases plus small hand-built networks."""

import itertools
from importlib import resources

import numpy as np
import pytest

from ecogrid import (
    Branch,
    Bus,
    CandidateBranch,
    CandidateSet,
    Generator,
    Network,
    parse_case,
)


def bundled_case_text(name: str) -> str:
    return resources.files("ecogrid.data").joinpath(name).read_text()


@pytest.fixture(scope="session")
def rts24() -> Network:
    return parse_case(bundled_case_text("case24_ieee_rts.m"))


@pytest.fixture(scope="session")
def ring5() -> Network:
    return parse_case(bundled_case_text("case5_ring.m"))


@pytest.fixture()
def two_bus() -> Network:
    """Slack generator feeding a single load over one reactive branch."""
    return Network(
        base_mva=100.0,
        buses=(
            Bus(id=1, voltage_kv=138.0, v_min=0.9, v_max=1.1, p_load=0.0,
                q_load=0.0, bus_kind="slack"),
            Bus(id=2, voltage_kv=138.0, v_min=0.9, v_max=1.1, p_load=100.0,
                q_load=0.0, bus_kind="pq"),
        ),
        branches=(
            Branch(from_bus=1, to_bus=2, r=0.0, x=0.1, b_charging=0.0,
                   s_max=None, tap_ratio=1.0),
        ),
        generators=(
            Generator(bus=1, p_min=0.0, p_max=300.0, q_min=-300.0, q_max=300.0,
                      p_set=100.0, q_set=0.0, v_set=1.0),
        ),
    )


@pytest.fixture()
def triangle() -> Network:
    """Three buses, equal reactances, injection at 1, load at 3."""
    buses = tuple(
        Bus(id=i, voltage_kv=138.0, v_min=0.9, v_max=1.1,
            p_load=100.0 if i == 3 else 0.0, q_load=0.0,
            bus_kind="slack" if i == 1 else "pq")
        for i in (1, 2, 3)
    )
    branches = tuple(
        Branch(from_bus=a, to_bus=b, r=0.0, x=0.2, b_charging=0.0,
               s_max=None, tap_ratio=1.0)
        for a, b in ((1, 2), (1, 3), (2, 3))
    )
    gens = (Generator(bus=1, p_min=0.0, p_max=300.0, q_min=-300.0, q_max=300.0,
                      p_set=100.0, q_set=0.0, v_set=1.0),)
    return Network(base_mva=100.0, buses=buses, branches=branches, generators=gens)


def random_ring_instance(rng: np.random.Generator, n_bus: int = 5, n_cand: int = 4):
    """A ring network with two generators and chord candidates; used by the
    enumeration-oracle tests."""
    buses = tuple(
        Bus(id=i, voltage_kv=138.0, v_min=0.95, v_max=1.05,
            p_load=float(rng.uniform(20, 80)) if i > 1 else 0.0, q_load=0.0,
            bus_kind="slack" if i == 1 else "pq")
        for i in range(1, n_bus + 1)
    )
    total = sum(b.p_load for b in buses)
    branches = tuple(
        Branch(from_bus=i, to_bus=i % n_bus + 1, r=0.01,
               x=float(rng.uniform(0.05, 0.2)), b_charging=0.0,
               s_max=None, tap_ratio=1.0)
        for i in range(1, n_bus + 1)
    )
    gens = (
        Generator(bus=1, p_min=0.0, p_max=total * 1.5, q_min=-100.0, q_max=100.0,
                  p_set=total * 0.6, q_set=0.0, v_set=1.0),
        Generator(bus=3, p_min=0.0, p_max=total, q_min=-100.0, q_max=100.0,
                  p_set=total * 0.4, q_set=0.0, v_set=1.0),
    )
    net = Network(base_mva=100.0, buses=buses, branches=branches, generators=gens)

    chords = [
        (a, b) for a, b in itertools.combinations(range(1, n_bus + 1), 2)
        if abs(a - b) not in (1, n_bus - 1)
    ]
    rng.shuffle(chords)
    entries = tuple(
        CandidateBranch(id=k + 1, from_bus=a, to_bus=b, r=0.01,
                        x=float(rng.uniform(0.05, 0.2)), b_charging=0.0,
                        s_max=None, tap_ratio=1.0)
        for k, (a, b) in enumerate(chords[:n_cand])
    )
    return net, CandidateSet(entries=entries, provenance="random-ring")
