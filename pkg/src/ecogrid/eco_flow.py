"""Ecological flow matrix construction and robustness metrics.

The flow matrix is square of size (actors + 3) where the actors are all
generators followed by all buses, bracketed by an import row and export /
dissipation columns.  Entries are nonnegative MW magnitudes oriented by
the actual flow direction.  Metrics come in an exact form and a relaxed
form in which every logarithm is replaced by a truncated odd-power
series; both are scale invariant.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .grid_model import CandidateSet, Network
from .power_flow import FlowSolution

__all__ = [
    "EcoFlowMatrix",
    "EcoMetrics",
    "build_efm",
    "eco_metrics_exact",
    "eco_metrics_relaxed",
    "eco_gradient",
    "log_series",
    "log_series_deriv",
    "relaxed_outer_robustness",
]

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class EcoFlowMatrix:
    """Directed flow magnitudes among import, generators, buses, export
    and dissipation."""

    t: np.ndarray
    gen_labels: tuple[str, ...]
    bus_labels: tuple[str, ...]

    @property
    def n_actors(self) -> int:
        return len(self.gen_labels) + len(self.bus_labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return ("import", *self.gen_labels, *self.bus_labels, "export", "dissipation")

    def to_csv(self) -> str:
        """Dense CSV with header row/column labels, for hand auditing."""
        buf = io.StringIO()
        labels = self.labels
        buf.write("," + ",".join(labels) + "\n")
        for lab, row in zip(labels, self.t):
            buf.write(lab + "," + ",".join(format(v, ".10g") for v in row) + "\n")
        return buf.getvalue()


@dataclass(frozen=True)
class EcoMetrics:
    """Total throughput, ascendency, development capacity and robustness."""

    tstp: float
    asc: float
    dc: float
    ratio: float
    r_eco: float


def build_efm(
    net: Network,
    sol: FlowSolution,
    cands: CandidateSet | None = None,
) -> EcoFlowMatrix:
    """Build the flow matrix from a solved operating point.

    ``sol`` must have been solved on ``net`` (with any build decisions
    already applied).  ``cands`` is accepted for interface completeness:
    unbuilt candidates are structural zeros, so only the branches present
    in ``net`` contribute.
    """
    if not sol.converged:
        raise ValueError("cannot build a flow matrix from an unsolved power flow")
    for b in net.buses:
        if b.p_load < 0:
            raise ValueError(f"bus {b.id}: negative load")

    n_gen = len(net.generators)
    n_bus = len(net.buses)
    size = 1 + n_gen + n_bus + 2
    t = np.zeros((size, size))

    imp = 0
    gen0 = 1
    bus0 = 1 + n_gen
    exp_col = 1 + n_gen + n_bus
    dis_col = exp_col + 1

    idx = net.bus_index
    for k, g in enumerate(net.generators):
        p = max(sol.p_gen[k], 0.0) if g.in_service else 0.0
        t[imp, gen0 + k] = p
        t[gen0 + k, bus0 + idx[g.bus]] = p

    # Bus-to-bus flows: magnitude in the row of the true sending bus;
    # parallel same-direction branches aggregate.
    for k, br in enumerate(net.branches):
        if not br.in_service:
            continue
        p = sol.p_flow[k]
        i, j = idx[br.from_bus], idx[br.to_bus]
        if p >= 0:
            t[bus0 + i, bus0 + j] += abs(p)
        else:
            t[bus0 + j, bus0 + i] += abs(p)

    for i, b in enumerate(net.buses):
        t[bus0 + i, exp_col] = b.p_load
        t[bus0 + i, dis_col] = max(sol.p_loss_bus[i], 0.0)

    return EcoFlowMatrix(
        t=t,
        gen_labels=tuple(f"gen{k + 1}@bus{g.bus}" for k, g in enumerate(net.generators)),
        bus_labels=tuple(f"bus{b.id}" for b in net.buses),
    )


def _positive(t: np.ndarray):
    mask = t > 0
    if not mask.any():
        raise ValueError("flow matrix has no positive entries")
    return mask


def eco_metrics_exact(efm: EcoFlowMatrix | np.ndarray) -> EcoMetrics:
    """Exact robustness: R = -a*ln(a) with a = ascendency / capacity."""
    t = efm.t if isinstance(efm, EcoFlowMatrix) else np.asarray(efm, dtype=float)
    mask = _positive(t)
    tstp = t.sum()
    row = t.sum(axis=1)
    col = t.sum(axis=0)
    tij = t[mask]
    ri = np.broadcast_to(row[:, None], t.shape)[mask]
    cj = np.broadcast_to(col[None, :], t.shape)[mask]

    dc = -tstp * np.sum((tij / tstp) * np.log2(tij / tstp))
    asc = tstp * np.sum((tij / tstp) * np.log2(tij * tstp / (ri * cj)))
    a = asc / dc
    r = -a * np.log(a) if a > 0 else 0.0
    return EcoMetrics(tstp=float(tstp), asc=float(asc), dc=float(dc),
                      ratio=float(a), r_eco=float(r))


def log_series(x: np.ndarray, order: int) -> np.ndarray:
    """Truncated odd-power expansion of ln(x) around 1, valid for x > 0:
    2 * sum_{n=1..order} ((x-1)/(x+1))^(2n-1) / (2n-1).
    """
    u = (x - 1.0) / (x + 1.0)
    acc = np.zeros_like(u)
    term = u.copy()
    u2 = u * u
    for n in range(1, order + 1):
        acc = acc + term / (2 * n - 1)
        term = term * u2
    return 2.0 * acc


def log_series_deriv(x: np.ndarray, order: int) -> np.ndarray:
    """Derivative of :func:`log_series` with respect to x."""
    u = (x - 1.0) / (x + 1.0)
    du = 2.0 / (x + 1.0) ** 2
    acc = np.zeros_like(u)
    term = np.ones_like(u)
    u2 = u * u
    for _n in range(1, order + 1):
        acc = acc + term
        term = term * u2
    return 2.0 * acc * du


def _relaxed_parts(t: np.ndarray, order: int):
    mask = _positive(t)
    tstp = t.sum()
    row = t.sum(axis=1)
    col = t.sum(axis=0)
    tij = t[mask]
    ri = np.broadcast_to(row[:, None], t.shape)[mask]
    cj = np.broadcast_to(col[None, :], t.shape)[mask]
    x = tij / tstp
    y = tij * tstp / (ri * cj)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("nonpositive logarithm argument; check flow orientation")
    dc = -(1.0 / LN2) * np.sum(tij * log_series(x, order))
    asc = (1.0 / LN2) * np.sum(tij * log_series(y, order))
    return mask, tstp, row, col, x, y, dc, asc


def eco_metrics_relaxed(efm: EcoFlowMatrix | np.ndarray, order: int = 1) -> EcoMetrics:
    """Robustness with every logarithm replaced by the order-``order``
    truncated series.  Order 1 gives the relaxation whose outer function
    peaks at 0.3431 (at a = sqrt(2) - 1) instead of 1/e."""
    if order < 1:
        raise ValueError("order must be >= 1")
    t = efm.t if isinstance(efm, EcoFlowMatrix) else np.asarray(efm, dtype=float)
    _mask, tstp, _row, _col, _x, _y, dc, asc = _relaxed_parts(t, order)
    a = asc / dc
    r = -a * float(log_series(np.array([a]), order)[0]) if a > 0 else 0.0
    return EcoMetrics(tstp=float(tstp), asc=float(asc), dc=float(dc),
                      ratio=float(a), r_eco=float(r))


def relaxed_outer_robustness(a: np.ndarray | float, order: int = 1) -> np.ndarray:
    """The relaxed outer function -a * ln_series(a); exposed for studying
    its maximum (0.3431 at a = sqrt(2)-1 for order 1)."""
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    return -arr * log_series(arr, order)


def eco_gradient(
    efm: EcoFlowMatrix | np.ndarray,
    relaxed: bool = False,
    order: int = 1,
) -> np.ndarray:
    """Analytic partials of the robustness metric w.r.t. each positive
    entry; zero entries get zero gradient."""
    t = efm.t if isinstance(efm, EcoFlowMatrix) else np.asarray(efm, dtype=float)
    mask = _positive(t)
    tstp = t.sum()
    row = t.sum(axis=1)
    col = t.sum(axis=0)
    tij = t[mask]
    ri = np.broadcast_to(row[:, None], t.shape)[mask]
    cj = np.broadcast_to(col[None, :], t.shape)[mask]
    x = tij / tstp
    y = tij * tstp / (ri * cj)

    if not relaxed:
        dc = -(1.0 / LN2) * np.sum(tij * np.log(x))
        asc = (1.0 / LN2) * np.sum(tij * np.log(y))
        d_dc = -(1.0 / LN2) * np.log(x)
        d_asc = (1.0 / LN2) * np.log(y)
        a = asc / dc
        dr_da = -(np.log(a) + 1.0)
    else:
        lx = log_series(x, order)
        ly = log_series(y, order)
        lpx = log_series_deriv(x, order)
        lpy = log_series_deriv(y, order)
        dc = -(1.0 / LN2) * np.sum(tij * lx)
        asc = (1.0 / LN2) * np.sum(tij * ly)

        h = tij * lpx * x  # for the dT/dS coupling in DC
        d_dc = -(1.0 / LN2) * (lx + lpx * x - h.sum() / tstp)

        g = tij * lpy * y
        g_full = np.zeros_like(t)
        g_full[mask] = g
        g_row = g_full.sum(axis=1)
        g_col = g_full.sum(axis=0)
        g_row_m = np.broadcast_to(g_row[:, None], t.shape)[mask]
        g_col_m = np.broadcast_to(g_col[None, :], t.shape)[mask]
        d_asc = (1.0 / LN2) * (ly + lpy * y + g.sum() / tstp
                               - g_row_m / ri - g_col_m / cj)
        a = asc / dc
        la = float(log_series(np.array([a]), order)[0])
        lpa = float(log_series_deriv(np.array([a]), order)[0])
        dr_da = -(la + a * lpa)

    da = (d_asc * dc - asc * d_dc) / dc**2
    grad = np.zeros_like(t)
    grad[mask] = dr_da * da
    return grad
