"""Backward Euler time stepping with the L-scheme inner iteration.

Per iteration ``i`` of time step ``n`` two linear mixed problems are solved
one after the other, both with saturation-dependent coefficients frozen at
the previous iterate ``s(theta^{n,i-1})``:

1. the pressure problem for ``(u, p)`` with mass weight ``a(s)``;
2. the stabilised saturation problem for ``(q, theta)``::

       L (theta^i - theta^{i-1}) + s(theta^{i-1}) - s^{n-1} + tau div q = tau f_src
       q = -grad theta + f_w(s) u + f1(s)

The iteration starts from the previous time level and stops when the L2
norm of the theta increment falls below ``tol_abs + tol_rel * |theta|``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fespace
from .errors import ConfigError, MaxItersExceeded, MissingMetadata
from .fespace import face_quadrature
from .grid import StructuredGrid
from .linsolve import FactorizationCache, SaddleSystem, solve_saddle
from .model import BoundaryConditions, CoefficientSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TwoPhaseState:
    theta: np.ndarray
    sat: np.ndarray
    p: np.ndarray
    q: np.ndarray
    u: np.ndarray
    t: float


@dataclass(frozen=True)
class LSchemeConfig:
    """Parameters of the L-scheme. ``L`` must dominate the Lipschitz constant of ``s``."""

    L: float
    tol_abs: float = 1e-8
    tol_rel: float = 0.0
    max_iters: int = 200

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError("L must be positive")
        if not (self.tol_abs > 0 or self.tol_rel > 0):
            raise ConfigError("at least one of tol_abs, tol_rel must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")

    def check(self, coeffs: CoefficientSet) -> None:
        if coeffs.L_s is not None and self.L < coeffs.L_s:
            raise ConfigError(
                f"L = {self.L} is below the Lipschitz constant L_s = {coeffs.L_s} of s(theta); "
                "the L-scheme requires L >= L_s"
            )


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    n_steps: int

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")

    @property
    def t_end(self) -> float:
        return self.tau * self.n_steps

    def time(self, n: int) -> float:
        return n * self.tau

    @classmethod
    def from_end(cls, t_end: float, tau: float) -> "TimeGrid":
        n = round(t_end / tau)
        if abs(n * tau - t_end) > 1e-12 * max(abs(t_end), 1.0):
            raise ConfigError(f"t_end={t_end} is not a multiple of tau={tau}")
        return cls(tau, int(n))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    inc_theta: float
    inc_q: float
    ratio: float
    div_residual: float = 0.0


@dataclass
class IterationHistory:
    step: int
    time: float
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    mass_defect: float = math.nan

    @property
    def n_iters(self) -> int:
        return len(self.records)

    @property
    def increments(self) -> np.ndarray:
        return np.array([r.inc_theta for r in self.records])


@dataclass(frozen=True)
class TauReport:
    admissible: bool
    tau_max: float
    C1: float
    C3: float


_TAU_KEYS = ("M_u", "L_a", "L_f3", "a_lo", "a_hi", "L_f2", "M_fw", "L_fw", "L_f1")


def tau_constants(coeffs: CoefficientSet, C_omega_d: float = 1.0) -> tuple[float, float, float]:
    """Constants ``C1``, ``C3`` and the bracket ``K`` with ``tau_max = 1 / (L K)``."""
    missing = [k for k in _TAU_KEYS if getattr(coeffs, k) is None]
    if missing:
        raise MissingMetadata(f"coefficient metadata missing: {', '.join(missing)}")
    M_u, L_a, L_f3 = coeffs.M_u, coeffs.L_a, coeffs.L_f3
    a_lo, a_hi, L_f2 = coeffs.a_lo, coeffs.a_hi, coeffs.L_f2
    M_fw, L_fw, L_f1 = coeffs.M_fw, coeffs.L_fw, coeffs.L_f1
    C1 = (
        4 * (M_u**2 * L_a**2 + L_f3**2 + 2 * a_hi**2 * C_omega_d**2 * L_f2**2) / a_lo**2
        + (M_u * L_a + L_f3) ** 2 / a_hi**2
    )
    C3 = M_fw**2 * C1 + (M_u * L_fw + L_f1) ** 2
    K = C3 + 4 * L_f1**2 + 8 * L_fw**2 * M_u**2 + 8 * C1 * M_fw**2
    return C1, C3, K


def check_tau_restriction(
    coeffs: CoefficientSet, L: float, tau: float, C_omega_d: float = 1.0
) -> TauReport:
    """Evaluate the mesh-independent time-step bound that makes the L-scheme contract."""
    C1, C3, K = tau_constants(coeffs, C_omega_d)
    tau_max = math.inf if K == 0 else 1.0 / (L * K)
    return TauReport(admissible=bool(tau <= tau_max), tau_max=tau_max, C1=C1, C3=C3)


class LSchemeSolver:
    """Assembled mixed discretization of one problem on one grid.

    Holds the constant matrices, boundary data and cached factorizations so
    that repeated pressure/saturation solves are cheap.
    """

    def __init__(
        self,
        grid: StructuredGrid,
        coeffs: CoefficientSet,
        bc: Optional[BoundaryConditions] = None,
        lumped: bool = False,
        precondition: bool = True,
    ):
        self.grid = grid
        self.coeffs = coeffs
        self.bc = bc if bc is not None else BoundaryConditions()
        self.lumped = lumped
        self.B = fespace.assemble_div(grid)
        self.M1 = fespace.assemble_mass_rt0(grid, lumped=lumped)
        self.M1_exact = self.M1 if not lumped else fespace.assemble_mass_rt0(grid)
        self.volume = grid.cell_volume
        self.cache = FactorizationCache(precondition=precondition)
        self.p_constraints, self.p_load = self._boundary("pressure")
        self.t_constraints, self.t_load = self._boundary("theta")

    def _boundary(self, which):
        g = self.grid
        constraints = []
        load = np.zeros(g.n_faces)
        pts, w = face_quadrature(g)
        for side in g.sides:
            faces = g.side_faces(side)
            bc = self.bc.side(which, side)
            if bc.kind == "dirichlet":
                load += fespace.boundary_pressure_load(g, bc.value, faces)
            else:
                if callable(bc.value):
                    p = pts[faces]
                    vals = np.broadcast_to(bc.value(*[p[..., a] for a in range(g.dim)]), p.shape[:2]) @ w
                else:
                    vals = np.full(faces.size, float(bc.value))
                dofs = g.outward_sign[faces] * vals * g.axis_face_area[g.face_axis[faces]]
                constraints.extend(zip(faces.tolist(), dofs.tolist()))
        return constraints, load

    # -- coefficient helpers ----------------------------------------------

    def _vector(self, func, sat):
        if func is None:
            return np.zeros(self.grid.n_faces)
        vals = np.asarray(func(sat), dtype=float).reshape(self.grid.n_cells, self.grid.dim)
        return fespace.cell_vector_load(self.grid, vals)

    def f2_cells(self, sat) -> np.ndarray:
        return np.asarray(self.coeffs.f2(sat, self.grid), dtype=float)

    def source_cells(self, t0: float, t1: float) -> np.ndarray:
        if self.coeffs.f_src is None:
            return np.zeros(self.grid.n_cells)
        return np.asarray(self.coeffs.f_src(t0, t1, self.grid), dtype=float)

    # -- the two linear solves ---------------------------------------------

    def pressure_system(self, sat_lagged) -> SaddleSystem:
        sat_lagged = np.asarray(sat_lagged, dtype=float)
        weight = np.asarray(self.coeffs.a(sat_lagged), dtype=float)
        M = fespace.assemble_mass_rt0(self.grid, weight, lumped=self.lumped)
        rhs_flux = self.p_load - self._vector(self.coeffs.f3, sat_lagged)
        rhs_scalar = self.volume * self.f2_cells(sat_lagged)
        return SaddleSystem(M, self.B, rhs_flux, rhs_scalar, None, self.p_constraints)

    def pressure_step(self, sat_lagged) -> tuple[np.ndarray, np.ndarray]:
        """Total flux ``u`` and global pressure ``p`` for frozen saturation."""
        return solve_saddle(self.pressure_system(sat_lagged), self.cache, "pressure")

    def saturation_system(self, sat_prev, theta_lagged, u_fresh, tau, L, source) -> SaddleSystem:
        sat_lag = np.asarray(self.coeffs.s(theta_lagged), dtype=float)
        fw = np.asarray(self.coeffs.f_w(sat_lag), dtype=float)
        K = fespace.assemble_weighted_coupling(self.grid, fw, lumped=self.lumped)
        rhs_flux = K @ u_fresh + self._vector(self.coeffs.f1, sat_lag) + self.t_load
        rhs_scalar = self.volume * (
            (L * theta_lagged - sat_lag + sat_prev) / tau + source
        )
        D = np.full(self.grid.n_cells, L * self.volume / tau)
        return SaddleSystem(self.M1, self.B, rhs_flux, rhs_scalar, D, self.t_constraints)

    def saturation_step(self, sat_prev, theta_lagged, u_fresh, tau, L, source=None):
        """Stabilised linear saturation problem; returns ``(theta, q)``."""
        if source is None:
            source = np.zeros(self.grid.n_cells)
        sys = self.saturation_system(sat_prev, theta_lagged, u_fresh, tau, L, source)
        q, theta = solve_saddle(sys, self.cache, "saturation")
        return theta, q

    # -- nonlinear step and time loop --------------------------------------

    def initial_state(self, theta0, t0: float = 0.0) -> TwoPhaseState:
        theta0 = np.broadcast_to(np.asarray(theta0, dtype=float), (self.grid.n_cells,)).copy()
        sat = np.asarray(self.coeffs.s(theta0), dtype=float)
        u, p = self.pressure_step(sat)
        return TwoPhaseState(theta0, sat, p, np.zeros(self.grid.n_faces), u, t0)

    def solve_step(
        self, prev: TwoPhaseState, tau: float, cfg: LSchemeConfig, step: int = 0
    ) -> tuple[TwoPhaseState, IterationHistory]:
        t_new = prev.t + tau
        source = self.source_cells(prev.t, t_new)
        hist = IterationHistory(step=step, time=t_new)
        theta_old, q_old = prev.theta, prev.q
        last_inc = math.nan
        for i in range(1, cfg.max_iters + 1):
            sat_lag = np.asarray(self.coeffs.s(theta_old), dtype=float)
            u, p = self.pressure_step(sat_lag)
            f2 = self.f2_cells(sat_lag)
            scale = max(np.abs(self.volume * f2).max(), np.abs(u).max(), np.finfo(float).tiny)
            div_res = np.abs(self.B @ u - self.volume * f2).max() / scale
            theta, q = self.saturation_step(prev.sat, theta_old, u, tau, cfg.L, source)
            inc = fespace.p0_norm(self.grid, theta - theta_old)
            inc_q = fespace.rt0_norm(self.grid, q - q_old, self.M1_exact)
            ratio = inc / last_inc if i > 1 and last_inc > 0 else math.nan
            hist.records.append(IterationRecord(i, inc, inc_q, ratio, float(div_res)))
            theta_old, q_old, last_inc = theta, q, inc
            if inc <= cfg.tol_abs + cfg.tol_rel * fespace.p0_norm(self.grid, theta):
                hist.converged = True
                break
        state = TwoPhaseState(theta, np.asarray(self.coeffs.s(theta), dtype=float), p, q, u, t_new)
        hist.mass_defect = self.mass_defect(prev, state, tau, source)
        if not hist.converged:
            raise MaxItersExceeded(
                f"L-scheme did not converge in {cfg.max_iters} iterations at t={t_new:g} "
                f"(last increment {last_inc:.3e})",
                history=hist,
            )
        log.debug("step %d t=%g: %d iterations", step, t_new, hist.n_iters)
        return state, hist

    def mass_defect(self, prev: TwoPhaseState, new: TwoPhaseState, tau: float, source=None) -> float:
        """L2 norm of the cellwise mass-balance defect density.

        The defect density of cell ``T`` is
        ``(s^n - s^{n-1}) + tau (div q)_T - tau f_T`` with ``(div q)_T = (B q)_T / |T|``.
        """
        if source is None:
            source = self.source_cells(prev.t, new.t)
        dens = (new.sat - prev.sat) + tau * (self.B @ new.q) / self.volume - tau * source
        return fespace.p0_norm(self.grid, dens)

    def run(
        self,
        time: TimeGrid,
        cfg: LSchemeConfig,
        theta0=0.0,
        snapshot_every: int = 1,
        callback=None,
    ) -> tuple[list[TwoPhaseState], list[IterationHistory]]:
        cfg.check(self.coeffs)
        state = self.initial_state(theta0)
        snapshots = [state]
        histories = []
        for n in range(1, time.n_steps + 1):
            state, hist = self.solve_step(state, time.tau, cfg, step=n)
            # pin the time to the grid instead of accumulating round-off
            state = TwoPhaseState(state.theta, state.sat, state.p, state.q, state.u, time.time(n))
            histories.append(hist)
            if n % snapshot_every == 0 or n == time.n_steps:
                snapshots.append(state)
            if callback is not None:
                callback(n, state, hist)
        return snapshots, histories


def pressure_step(grid, coeffs, sat_lagged, bc=None, lumped=False):
    """One mixed pressure solve with coefficients frozen at ``sat_lagged``."""
    return LSchemeSolver(grid, coeffs, bc, lumped).pressure_step(sat_lagged)


def saturation_step(grid, coeffs, state_prev, theta_lagged, u_fresh, cfg, tau, bc=None, lumped=False):
    """One stabilised saturation solve; returns ``(theta, q)``."""
    solver = LSchemeSolver(grid, coeffs, bc, lumped)
    source = solver.source_cells(state_prev.t, state_prev.t + tau)
    return solver.saturation_step(state_prev.sat, theta_lagged, u_fresh, tau, cfg.L, source)


def l_scheme_solve(grid, coeffs, state_prev, cfg, tau, bc=None, lumped=False):
    """Advance one backward Euler step; returns ``(state, history)``."""
    cfg.check(coeffs)
    return LSchemeSolver(grid, coeffs, bc, lumped).solve_step(state_prev, tau, cfg, step=1)


def run_simulation(grid, coeffs, bc, time, cfg, theta0=0.0, snapshot_every=1, lumped=False):
    """Run ``time.n_steps`` backward Euler steps from ``theta0``."""
    return LSchemeSolver(grid, coeffs, bc, lumped).run(time, cfg, theta0, snapshot_every)


def estimate_flux_bound(solver: LSchemeSolver, sat) -> float:
    """Pilot estimate of ``sup |u|``: largest face flux density of one pressure solve."""
    u, _ = solver.pressure_step(sat)
    area = solver.grid.axis_face_area[solver.grid.face_axis]
    return float(np.abs(u / area).max(initial=0.0))
