"""Candidate-branch synthesis.

New prospective lines connect two buses at the same voltage level;
their electrical parameters are drawn from per-level normal
distributions fitted to the existing branches at that level.

Randomness comes from a single ``numpy.random.default_rng(seed)``
(PCG64), consumed in a fixed order: first the pair selection, then four
parameter draws (r, x, b, s_max) per candidate in candidate order.
Fixed seed therefore reproduces candidate files byte for byte on any
platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grid_model import CandidateBranch, CandidateSet, Network

__all__ = ["GenerationSpec", "generate_candidates"]

_KV_DECIMALS = 1  # "same voltage level" compares kV rounded to 0.1
_MAX_REDRAWS = 100


@dataclass(frozen=True)
class GenerationSpec:
    m: int
    seed: int = 0
    voltage_levels: str = "highest-only"  # "all" | "highest-only"
    allow_parallel: bool = False

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.voltage_levels not in ("all", "highest-only"):
            raise ValueError(f"unknown voltage_levels {self.voltage_levels!r}")


def _level_of(kv: float) -> float:
    return round(kv, _KV_DECIMALS)


def _fit_levels(net: Network) -> dict[float, dict[str, tuple[float, float]]]:
    """Per-voltage-level (mean, std) of r, x, b and s_max over existing
    branches whose endpoints share that level."""
    kv_by_bus = {b.id: _level_of(b.voltage_kv) for b in net.buses}
    grouped: dict[float, list] = {}
    for br in net.branches:
        lf, lt = kv_by_bus[br.from_bus], kv_by_bus[br.to_bus]
        if lf != lt:
            continue  # transformer; not a same-level line
        grouped.setdefault(lf, []).append(br)
    fits = {}
    for level, branches in grouped.items():
        params = {}
        for name, values in (
            ("r", [br.r for br in branches]),
            ("x", [br.x for br in branches]),
            ("b", [br.b_charging for br in branches]),
            ("s_max", [br.s_max for br in branches if br.s_max is not None]),
        ):
            if values:
                arr = np.asarray(values, dtype=float)
                params[name] = (float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0)
            else:
                params[name] = (0.0, 0.0)
        fits[level] = params
    return fits


def _draw_positive(rng: np.random.Generator, mu: float, sigma: float) -> float:
    """Normal draw, resampled while nonpositive; clamps to the mean after
    too many rejections (the normal model permits values it cannot mean)."""
    if sigma == 0.0:
        return mu
    for _ in range(_MAX_REDRAWS):
        value = rng.normal(mu, sigma)
        if value > 0:
            return value
    return mu


def generate_candidates(net: Network, spec: GenerationSpec) -> CandidateSet:
    """Create ``spec.m`` candidate branches between same-level bus pairs.

    Pairs are drawn uniformly without replacement from the unused pairs
    in scope; existing in-service branch pairs are excluded unless
    ``allow_parallel``.  Reactance and limit draws are kept positive.
    """
    fits = _fit_levels(net)
    if not fits:
        raise ValueError("no same-level branches to fit parameter distributions")

    kv_by_bus = {b.id: _level_of(b.voltage_kv) for b in net.buses}
    if spec.voltage_levels == "highest-only":
        in_scope = {max(fits)}
    else:
        in_scope = set(fits)

    existing = {
        (min(br.from_bus, br.to_bus), max(br.from_bus, br.to_bus))
        for br in net.branches
        if br.in_service
    }
    pool: list[tuple[int, int]] = []
    for a, b in itertools.combinations(sorted(kv_by_bus), 2):
        level = kv_by_bus[a]
        if level != kv_by_bus[b] or level not in in_scope:
            continue
        if (a, b) in existing and not spec.allow_parallel:
            continue
        pool.append((a, b))

    if len(pool) < spec.m:
        raise ValueError(
            f"requested {spec.m} candidates but only {len(pool)} distinct pairs available"
        )

    rng = np.random.default_rng(spec.seed)
    picked = rng.choice(len(pool), size=spec.m, replace=False)

    entries = []
    for cid, pool_i in enumerate(picked, start=1):
        a, b = pool[pool_i]
        fit = fits[kv_by_bus[a]]
        r = max(rng.normal(*fit["r"]), 0.0) if fit["r"][1] > 0 else fit["r"][0]
        x = _draw_positive(rng, *fit["x"])
        b_ch = rng.normal(*fit["b"]) if fit["b"][1] > 0 else fit["b"][0]
        s_mu, s_sigma = fit["s_max"]
        s_max = _draw_positive(rng, s_mu, s_sigma) if s_mu > 0 else None
        entries.append(
            CandidateBranch(
                id=cid,
                from_bus=a,
                to_bus=b,
                r=r,
                x=x,
                b_charging=max(b_ch, 0.0),
                s_max=s_max,
                tap_ratio=1.0,  # tap fitting not specified; lines only
            )
        )
    return CandidateSet(
        entries=tuple(entries),
        provenance=f"generated(seed={spec.seed})",
        allow_parallel=spec.allow_parallel,
    )
