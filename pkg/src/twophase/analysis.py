"""Space-time error functionals, convergence rates and L-scheme diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientRows, MissingSnapshot, TooFewIterations
from .fespace import cell_quadrature, gauss_rule, rt0_eval
from .grid import StructuredGrid
from .model import ManufacturedSolution
from .stepper import IterationHistory, TimeGrid, TwoPhaseState

ERROR_KEYS = ("E_p", "E_stheta", "E_theta", "E_s")


@dataclass(frozen=True)
class ErrorReport:
    E_p: float
    E_stheta: float
    E_theta: float
    E_s: float
    h: float
    tau: float
    E_q: Optional[float] = None

    def __post_init__(self):
        for key in ERROR_KEYS:
            val = getattr(self, key)
            if not math.isfinite(val):
                raise ValueError(f"{key} is not finite")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ERROR_KEYS}


def compute_errors(
    snapshots: Sequence[TwoPhaseState],
    exact: ManufacturedSolution,
    grid: StructuredGrid,
    time: TimeGrid,
    order: int = 2,
    include_flux: bool = False,
) -> ErrorReport:
    """Discrete-in-time, quadrature-in-space errors against an exact solution.

    ``E_p = sum_n tau |pbar^n - p_h^n|^2`` with ``pbar^n`` the time average of
    the exact pressure over ``(t_{n-1}, t_n]``; ``E_theta``, ``E_s`` and
    ``E_stheta`` integrate the (squared) differences over each time interval.
    Time integrals use Gauss rules of ``order`` points per interval, space
    integrals tensor Gauss rules of ``order`` points per axis per cell.

    Args:
        snapshots: states at ``t_1, ..., t_N``; extra states are ignored.
        include_flux: also report ``E_q`` for the wetting flux.
    """
    by_step = {int(round(st.t / time.tau)): st for st in snapshots}
    missing = [n for n in range(1, time.n_steps + 1) if n not in by_step]
    if missing:
        raise MissingSnapshot(f"no snapshot for time steps {missing[:5]}")
    pts, wref = cell_quadrature(grid, order)
    wspace = wref * grid.cell_volume
    coords = [pts[..., a] for a in range(grid.dim)]
    tq, wq = gauss_rule(order)
    E = dict.fromkeys(ERROR_KEYS, 0.0)
    E_q = 0.0
    tau = time.tau
    for n in range(1, time.n_steps + 1):
        st = by_step[n]
        t0 = time.time(n - 1)
        theta_h = st.theta[:, None]
        s_h = st.sat[:, None]
        pbar = np.zeros(pts.shape[:2])
        for tg, wg in zip(tq, wq):
            t = t0 + tg * tau
            th = np.broadcast_to(exact.theta(t, *coords), pts.shape[:2])
            sat = np.broadcast_to(exact.s(t, *coords), pts.shape[:2])
            dth = th - theta_h
            ds = sat - s_h
            E["E_theta"] += tau * wg * np.sum((dth**2) @ wspace)
            E["E_s"] += tau * wg * np.sum((ds**2) @ wspace)
            E["E_stheta"] += tau * wg * np.sum((ds * dth) @ wspace)
            pbar += wg * np.broadcast_to(exact.p(t, *coords), pts.shape[:2])
            if include_flux:
                qh = rt0_eval(grid, st.q, pts)
                qe = np.stack(np.broadcast_arrays(*exact.q(t, *coords)), axis=-1)
                E_q += tau * wg * np.sum(((qe - qh) ** 2).sum(axis=-1) @ wspace)
        E["E_p"] += tau * np.sum(((pbar - st.p[:, None]) ** 2) @ wspace)
    return ErrorReport(h=float(grid.h.max()), tau=tau, E_q=E_q if include_flux else None, **E)


@dataclass
class ConvergenceRow:
    h: float
    tau: float
    report: ErrorReport
    rates: dict[str, float] = field(default_factory=dict)


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)

    def add(self, report: ErrorReport) -> None:
        self.rows.append(ConvergenceRow(report.h, report.tau, report))

    def __len__(self):
        return len(self.rows)


def convergence_rate(e0: float, e1: float, h0: float, h1: float) -> float:
    return (math.log(e1) - math.log(e0)) / (math.log(h1) - math.log(h0))


def compute_rates(table: ConvergenceTable) -> ConvergenceTable:
    """Observed orders between consecutive rows for every error column."""
    if len(table.rows) < 2:
        raise InsufficientRows("rates need at least two refinement levels")
    rows = [replace(table.rows[0], rates={})]
    for prev, row in zip(table.rows, table.rows[1:]):
        rates = {
            key: convergence_rate(getattr(prev.report, key), getattr(row.report, key), prev.h, row.h)
            for key in ERROR_KEYS
        }
        rows.append(replace(row, rates=rates))
    return ConvergenceTable(rows)


@dataclass(frozen=True)
class StepContraction:
    step: int
    n_iters: int
    rho: float
    ratios: tuple[float, ...]
    monotone: bool


@dataclass(frozen=True)
class ContractionSummary:
    steps: tuple[StepContraction, ...]
    max_iters: int
    mean_iters: float
    median_iters: float

    @property
    def rho(self) -> np.ndarray:
        return np.array([s.rho for s in self.steps])


def increment_ratios(increments: Sequence[float]) -> np.ndarray:
    """Ratios ``inc(i) / inc(i-1)`` for ``i >= 2`` (1-based), skipping zero denominators."""
    inc = np.asarray(increments, dtype=float)
    if inc.size < 2:
        return np.empty(0)
    den = inc[:-1]
    ok = den > 0
    return inc[1:][ok] / den[ok]


def geometric_std(values: Sequence[float]) -> float:
    """Geometric standard deviation ``exp(std(log v))``; 1 for fewer than two values."""
    v = np.asarray(values, dtype=float)
    v = v[v > 0]
    if v.size < 2:
        return 1.0
    return float(np.exp(np.std(np.log(v))))


def contraction_diagnostics(histories: IterationHistory | Sequence[IterationHistory]) -> ContractionSummary:
    """Fitted contraction factor per time step and iteration statistics.

    ``rho`` is the geometric mean of successive increment ratios. Steps with
    fewer than three iterations get ``rho = nan``.
    """
    if isinstance(histories, IterationHistory):
        histories = [histories]
    steps = []
    for hist in histories:
        ratios = increment_ratios(hist.increments)
        if hist.n_iters >= 3 and ratios.size and np.all(ratios > 0):
            rho = float(np.exp(np.mean(np.log(ratios))))
        else:
            rho = math.nan
        steps.append(StepContraction(
            step=hist.step,
            n_iters=hist.n_iters,
            rho=rho,
            ratios=tuple(float(r) for r in ratios),
            monotone=bool(np.all(ratios < 1.0)),
        ))
    if not any(s.n_iters >= 3 for s in steps):
        raise TooFewIterations("no time step recorded three or more iterations")
    counts = np.array([s.n_iters for s in steps])
    return ContractionSummary(
        steps=tuple(steps),
        max_iters=int(counts.max()),
        mean_iters=float(counts.mean()),
        median_iters=float(np.median(counts)),
    )
