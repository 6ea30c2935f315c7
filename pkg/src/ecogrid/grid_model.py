"""Grid data model: buses, branches, generators, candidate branches.

Holds the per-unit conventions and the parsing/serialization of
MATPOWER-style case files and candidate-branch files.  All types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

__all__ = [
    "Bus",
    "Branch",
    "Generator",
    "Network",
    "CandidateBranch",
    "CandidateSet",
    "CaseFormatError",
    "parse_case",
    "write_case",
    "apply_decisions",
    "parse_candidates",
    "write_candidates",
]


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case / candidate files."""


@dataclass(frozen=True)
class Bus:
    """A network node.

    Loads are in MW / MVAr, shunts in MW / MVAr at V = 1 pu, voltage
    bounds in per unit.  ``bus_kind`` is one of ``"slack"``, ``"pv"``,
    ``"pq"``.
    """

    id: int
    voltage_kv: float
    v_min: float = 0.9
    v_max: float = 1.1
    p_load: float = 0.0
    q_load: float = 0.0
    bus_kind: str = "pq"
    gs: float = 0.0
    bs: float = 0.0
    vm: float = 1.0
    va: float = 0.0  # radians internally; files carry degrees

    def __post_init__(self) -> None:
        if self.bus_kind not in ("slack", "pv", "pq"):
            raise ValueError(f"bus {self.id}: unknown bus_kind {self.bus_kind!r}")
        if not (0.0 < self.v_min <= self.v_max):
            raise ValueError(f"bus {self.id}: invalid voltage band [{self.v_min}, {self.v_max}]")
        if self.p_load < 0 or self.q_load < 0:
            raise ValueError(f"bus {self.id}: negative load")


@dataclass(frozen=True)
class Branch:
    """A transmission line or transformer between two buses.

    Impedances are per unit on the system base.  ``s_max`` is the MVA
    limit; ``None`` means unlimited (MATPOWER encodes this as 0).
    """

    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    s_max: float | None = None
    tap_ratio: float = 1.0
    in_service: bool = True

    def __post_init__(self) -> None:
        if self.x == 0.0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: zero reactance")
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: self loop")
        if self.s_max is not None and self.s_max <= 0:
            raise ValueError(f"branch {self.from_bus}-{self.to_bus}: nonpositive s_max")


@dataclass(frozen=True)
class Generator:
    """A generating unit (or synchronous condenser) attached to a bus."""

    bus: int
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    p_set: float = 0.0
    q_set: float = 0.0
    v_set: float = 1.0
    in_service: bool = True

    def __post_init__(self) -> None:
        if self.p_min > self.p_max:
            raise ValueError(f"generator at bus {self.bus}: p_min > p_max")
        if self.q_min > self.q_max:
            raise ValueError(f"generator at bus {self.bus}: q_min > q_max")


@dataclass(frozen=True)
class Network:
    """A complete grid: buses, branches, generators and the MVA base."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = "case"

    def __post_init__(self) -> None:
        if self.base_mva <= 0:
            raise ValueError("base_mva must be positive")
        ids = [b.id for b in self.buses]
        if len(ids) != len(set(ids)):
            raise CaseFormatError("duplicate bus ids")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseFormatError(
                    f"branch {br.from_bus}-{br.to_bus} references a missing bus"
                )
        for g in self.generators:
            if g.bus not in known:
                raise CaseFormatError(f"generator references missing bus {g.bus}")
        slacks = [b.id for b in self.buses if b.bus_kind == "slack"]
        if len(slacks) != 1:
            raise CaseFormatError(f"expected exactly one slack bus, found {slacks}")

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.bus_kind == "slack")

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index[bus_id]]


@dataclass(frozen=True)
class CandidateBranch:
    """A prospective branch with a binary build decision (0 before solving)."""

    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    s_max: float | None = None
    tap_ratio: float = 1.0
    decision: int = 0

    def __post_init__(self) -> None:
        if self.decision not in (0, 1):
            raise ValueError(f"candidate {self.id}: decision must be 0 or 1")
        if self.x == 0.0:
            raise ValueError(f"candidate {self.id}: zero reactance")
        if self.from_bus == self.to_bus:
            raise ValueError(f"candidate {self.id}: self loop")

    def as_branch(self) -> Branch:
        return Branch(
            from_bus=self.from_bus,
            to_bus=self.to_bus,
            r=self.r,
            x=self.x,
            b_charging=self.b_charging,
            s_max=self.s_max,
            tap_ratio=self.tap_ratio,
        )


@dataclass(frozen=True)
class CandidateSet:
    """An ordered collection of candidate branches plus its provenance."""

    entries: tuple[CandidateBranch, ...]
    provenance: str = "loaded"
    allow_parallel: bool = False

    def __post_init__(self) -> None:
        seen = [(min(c.from_bus, c.to_bus), max(c.from_bus, c.to_bus)) for c in self.entries]
        if len(seen) != len(set(seen)) and not self.allow_parallel:
            raise CaseFormatError("duplicate candidate bus pairs (set allow_parallel to permit)")

    def check_against(self, net: Network) -> None:
        """Reject candidates duplicating an existing in-service branch pair."""
        if self.allow_parallel:
            return
        existing = {
            (min(b.from_bus, b.to_bus), max(b.from_bus, b.to_bus))
            for b in net.branches
            if b.in_service
        }
        for c in self.entries:
            pair = (min(c.from_bus, c.to_bus), max(c.from_bus, c.to_bus))
            if pair in existing:
                raise CaseFormatError(
                    f"candidate {c.id} duplicates existing branch {pair[0]}-{pair[1]}"
                )

    def with_decisions(self, decisions) -> "CandidateSet":
        if len(decisions) != len(self.entries):
            raise ValueError("decision vector length mismatch")
        new = tuple(replace(c, decision=int(d)) for c, d in zip(self.entries, decisions))
        return replace(self, entries=new)


# --- MATPOWER-style case parsing -------------------------------------------

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([0-9eE.+-]+)\s*;")
_NAME_RE = re.compile(r"function\s+mpc\s*=\s*(\w+)")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(name: str, body: str) -> list[list[float]]:
    rows = []
    for lineno, raw in enumerate(body.replace(";", ";\n").splitlines()):
        row = raw.strip().rstrip(";").strip()
        if not row:
            continue
        try:
            values = [float(tok) for tok in re.split(r"[,\s]+", row) if tok]
        except ValueError as exc:
            raise CaseFormatError(f"mpc.{name} row {lineno}: {exc}") from None
        rows.append(values)
    if rows:
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            bad = next(i for i, r in enumerate(rows) if len(r) != len(rows[0]))
            raise CaseFormatError(
                f"mpc.{name} row {bad}: ragged row with {len(rows[bad])} columns"
            )
    return rows


_KIND_BY_TYPE = {3: "slack", 2: "pv", 1: "pq"}


def parse_case(text: str) -> Network:
    """Parse MATPOWER-style case text into a :class:`Network`.

    Only the ``baseMVA``, ``bus``, ``gen`` and ``branch`` blocks are read;
    the function wrapper and comments are ignored.  Angles are converted
    to radians at this boundary.
    """
    clean = _strip_comments(text)
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise CaseFormatError("missing mpc.baseMVA")
    base_mva = float(m.group(1))
    name_m = _NAME_RE.search(clean)
    name = name_m.group(1) if name_m else "case"

    blocks = {m.group(1): m.group(2) for m in _MATRIX_RE.finditer(clean)}
    for required in ("bus", "gen", "branch"):
        if required not in blocks:
            raise CaseFormatError(f"missing mpc.{required} block")

    buses = []
    for row in _parse_matrix("bus", blocks["bus"]):
        if len(row) < 13:
            raise CaseFormatError(f"mpc.bus row for bus {row[:1]}: expected 13 columns, got {len(row)}")
        btype = int(row[1])
        if btype not in _KIND_BY_TYPE:
            raise CaseFormatError(f"bus {int(row[0])}: unsupported type {btype}")
        buses.append(
            Bus(
                id=int(row[0]),
                bus_kind=_KIND_BY_TYPE[btype],
                p_load=row[2],
                q_load=row[3],
                gs=row[4],
                bs=row[5],
                vm=row[7],
                va=math.radians(row[8]),
                voltage_kv=row[9],
                v_max=row[11],
                v_min=row[12],
            )
        )

    gens = []
    for row in _parse_matrix("gen", blocks["gen"]):
        if len(row) < 10:
            raise CaseFormatError(f"mpc.gen row for bus {row[:1]}: expected >= 10 columns, got {len(row)}")
        gens.append(
            Generator(
                bus=int(row[0]),
                p_set=row[1],
                q_set=row[2],
                q_max=row[3],
                q_min=row[4],
                v_set=row[5],
                in_service=row[7] > 0,
                p_max=row[8],
                p_min=row[9],
            )
        )

    branches = []
    for row in _parse_matrix("branch", blocks["branch"]):
        if len(row) < 11:
            raise CaseFormatError(
                f"mpc.branch row {row[:2]}: expected >= 11 columns, got {len(row)}"
            )
        rate_a = row[5]
        tap = row[8] if row[8] != 0 else 1.0
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charging=row[4],
                s_max=rate_a if rate_a > 0 else None,
                tap_ratio=tap,
                in_service=row[10] > 0,
            )
        )

    return Network(
        base_mva=base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        name=name,
    )


_TYPE_BY_KIND = {"slack": 3, "pv": 2, "pq": 1}


def _fmt(value: float) -> str:
    return format(value, ".10g")


def write_case(net: Network) -> str:
    """Serialize a :class:`Network` back to MATPOWER-style case text.

    Round-trip stable: ``parse_case(write_case(n))`` equals ``n``
    field-for-field up to float formatting.
    """
    lines = [f"function mpc = {net.name}", "mpc.version = '2';", ""]
    lines.append(f"mpc.baseMVA = {_fmt(net.base_mva)};")
    lines.append("")
    lines.append("%% bus data")
    lines.append("mpc.bus = [")
    for b in net.buses:
        row = [
            b.id, _TYPE_BY_KIND[b.bus_kind], _fmt(b.p_load), _fmt(b.q_load),
            _fmt(b.gs), _fmt(b.bs), 1, _fmt(b.vm), _fmt(math.degrees(b.va)),
            _fmt(b.voltage_kv), 1, _fmt(b.v_max), _fmt(b.v_min),
        ]
        lines.append("\t" + "\t".join(str(v) for v in row) + ";")
    lines.append("];")
    lines.append("")
    lines.append("%% generator data")
    lines.append("mpc.gen = [")
    for g in net.generators:
        row = [
            g.bus, _fmt(g.p_set), _fmt(g.q_set), _fmt(g.q_max), _fmt(g.q_min),
            _fmt(g.v_set), _fmt(net.base_mva), int(g.in_service),
            _fmt(g.p_max), _fmt(g.p_min),
        ]
        lines.append("\t" + "\t".join(str(v) for v in row) + ";")
    lines.append("];")
    lines.append("")
    lines.append("%% branch data")
    lines.append("mpc.branch = [")
    for br in net.branches:
        rate = br.s_max if br.s_max is not None else 0.0
        row = [
            br.from_bus, br.to_bus, _fmt(br.r), _fmt(br.x), _fmt(br.b_charging),
            _fmt(rate), 0, 0, _fmt(br.tap_ratio), 0, int(br.in_service), -360, 360,
        ]
        lines.append("\t" + "\t".join(str(v) for v in row) + ";")
    lines.append("];")
    lines.append("")
    return "\n".join(lines)


def apply_decisions(net: Network, cands: CandidateSet) -> Network:
    """Return a new network with every decision-1 candidate built.

    The input network is never mutated; applying the same decisions twice
    gives the same result.
    """
    cands.check_against(net)
    built = tuple(c.as_branch() for c in cands.entries if c.decision == 1)
    return replace(net, branches=net.branches + built)


# --- candidate file format ---------------------------------------------------
#
# UTF-8, one record per line, tab- or comma-separated:
#   id, from_bus, to_bus, r, x, b, s_max, tap
# Lines starting with '#' are comments; s_max = 0 means unlimited.


def parse_candidates(text: str, allow_parallel: bool = False) -> CandidateSet:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = [t for t in re.split(r"[,\t\s]+", line) if t]
        if len(toks) != 8:
            raise CaseFormatError(f"candidate line {lineno}: expected 8 fields, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise CaseFormatError(f"candidate line {lineno}: {exc}") from None
        s_max = vals[6] if vals[6] > 0 else None
        entries.append(
            CandidateBranch(
                id=int(vals[0]),
                from_bus=int(vals[1]),
                to_bus=int(vals[2]),
                r=vals[3],
                x=vals[4],
                b_charging=vals[5],
                s_max=s_max,
                tap_ratio=vals[7] if vals[7] != 0 else 1.0,
            )
        )
    return CandidateSet(entries=tuple(entries), provenance="loaded", allow_parallel=allow_parallel)


def write_candidates(cands: CandidateSet, header: str | None = None) -> str:
    lines = []
    if header:
        for h in header.splitlines():
            lines.append(f"# {h}")
    lines.append("# id\tfrom_bus\tto_bus\tr\tx\tb\ts_max\ttap")
    for c in cands.entries:
        s_max = c.s_max if c.s_max is not None else 0.0
        # repr gives the shortest exact decimal: files regenerate and
        # re-parse bit-identically
        lines.append(
            "\t".join(
                [
                    str(c.id), str(c.from_bus), str(c.to_bus),
                    repr(c.r), repr(c.x), repr(c.b_charging),
                    repr(s_max), repr(c.tap_ratio),
                ]
            )
        )
    return "\n".join(lines) + "\n"
