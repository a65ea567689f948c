"""Coefficient functions, built-in problems and the Kirchhoff transform.

The transformed two-phase system solved here is::

    d/dt s(theta) + div q = f_src
    q = -grad theta + f_w(s) u + f1(s)
    div u = f2(s)
    a(s) u = -grad p - f3(s)

Saturation-dependent coefficients act on cellwise arrays. ``f2`` and
``f_src`` are given directly as cell averages because the built-in problems
use space-dependent data (a manufactured right-hand side, a point injection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import CoefficientValidationError, QuadratureFailure
from .fespace import project_p0
from .grid import StructuredGrid

Array = np.ndarray

DAY = 86400.0


@dataclass(frozen=True)
class SideBC:
    """Boundary condition on one side of the box.

    ``kind`` is ``"dirichlet"`` (value of p or theta, natural in the mixed
    form) or ``"flux"`` (outward normal flux density, imposed on the face
    DOFs). ``value`` is a constant or a callable of the coordinates.
    """

    kind: str = "dirichlet"
    value: float | Callable[..., Array] = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "flux"):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")


NO_FLOW = SideBC("flux", 0.0)


@dataclass
class BoundaryConditions:
    """Per-side conditions for the pressure and the complementary pressure.

    Sides not listed get homogeneous Dirichlet data.
    """

    pressure: dict[str, SideBC] = field(default_factory=dict)
    theta: dict[str, SideBC] = field(default_factory=dict)

    def side(self, which: str, name: str) -> SideBC:
        table = self.pressure if which == "pressure" else self.theta
        return table.get(name, SideBC())


@dataclass
class CoefficientSet:
    """Coefficient functions with the constants used by the convergence theory.

    Callables:
        s: theta -> saturation in [0, 1], monotone.
        a: saturation -> inverse total mobility, bounded away from zero.
        f_w: saturation -> fractional flow.
        f1, f3: saturation -> ``(n, dim)`` vectors, or None for zero.
        f2: ``(sat, grid) -> cell averages`` of the total-flux divergence.
        f_src: ``(t0, t1, grid) -> cell averages`` of the saturation source
            averaged over ``[t0, t1]``, or None.

    Constants (None when unknown): ``L_s`` and the bounds/Lipschitz constants
    entering the time-step restriction of the L-scheme.
    """

    s: Callable[[Array], Array]
    a: Callable[[Array], Array]
    f_w: Callable[[Array], Array]
    f2: Callable[[Array, StructuredGrid], Array]
    f1: Optional[Callable[[Array], Array]] = None
    f3: Optional[Callable[[Array], Array]] = None
    f_src: Optional[Callable[[float, float, StructuredGrid], Array]] = None
    theta_range: tuple[float, float] = (0.0, 1.0)
    L_s: Optional[float] = None
    a_lo: Optional[float] = None
    a_hi: Optional[float] = None
    M_u: Optional[float] = None
    L_a: Optional[float] = None
    L_fw: Optional[float] = None
    M_fw: Optional[float] = None
    L_f1: Optional[float] = None
    L_f2: Optional[float] = None
    L_f3: Optional[float] = None
    name: str = "custom"

    def constants(self) -> dict[str, Optional[float]]:
        keys = ("L_s", "a_lo", "a_hi", "M_u", "L_a", "L_fw", "M_fw", "L_f1", "L_f2", "L_f3")
        return {k: getattr(self, k) for k in keys}

    def validate(self, n_samples: int = 10_000, rtol: float = 1e-9) -> None:
        """Check the structural assumptions by dense sampling.

        Samples ``s`` on :attr:`theta_range` and the saturation functions on
        ``[0, 1]``. Raises :class:`CoefficientValidationError` on violation.
        """
        lo, hi = self.theta_range
        th = np.linspace(lo, hi, n_samples)
        sv = np.asarray(self.s(th), dtype=float)
        if np.any(sv < -rtol) or np.any(sv > 1 + rtol):
            raise CoefficientValidationError("s(theta) leaves [0, 1] on the sampled range")
        if np.any(np.diff(sv) < -rtol * max(1.0, np.abs(sv).max())):
            raise CoefficientValidationError("s(theta) is not monotone nondecreasing")
        _check_lipschitz("s", th, sv, self.L_s, rtol)

        sat = np.linspace(0.0, 1.0, n_samples)
        av = np.asarray(self.a(sat), dtype=float)
        if np.any(av <= 0):
            raise CoefficientValidationError("a(s) must be strictly positive")
        if self.a_lo is not None and av.min() < self.a_lo * (1 - rtol):
            raise CoefficientValidationError(f"a(s) drops below declared a_lo={self.a_lo}")
        if self.a_hi is not None and av.max() > self.a_hi * (1 + rtol):
            raise CoefficientValidationError(f"a(s) exceeds declared a_hi={self.a_hi}")
        _check_lipschitz("a", sat, av, self.L_a, rtol)

        fw = np.asarray(self.f_w(sat), dtype=float)
        if self.M_fw is not None:
            if self.M_fw > 1 + rtol:
                raise CoefficientValidationError("f_w bound M_fw must not exceed 1")
            if np.abs(fw).max() > self.M_fw * (1 + rtol):
                raise CoefficientValidationError(f"|f_w| exceeds declared M_fw={self.M_fw}")
        _check_lipschitz("f_w", sat, fw, self.L_fw, rtol)

        for name, func, const in (("f1", self.f1, self.L_f1), ("f3", self.f3, self.L_f3)):
            if func is None:
                continue
            vals = np.asarray(func(sat), dtype=float).reshape(n_samples, -1)
            _check_lipschitz(name, sat, np.linalg.norm(vals, axis=1), const, rtol)


def _check_lipschitz(name, x, y, const, rtol):
    if const is None:
        return
    dx = np.diff(x)
    ok = dx > 0
    if not np.any(ok):
        return
    q = np.abs(np.diff(y))[ok] / dx[ok]
    if q.max() > const * (1 + rtol) + 1e-12:
        raise CoefficientValidationError(
            f"declared Lipschitz constant of {name} ({const}) is below the sampled "
            f"difference quotient {q.max():.6g}"
        )


def clipped_square(theta):
    """``s(theta) = theta**2`` on [0, 1], extended by 0 below and 1 above."""
    t = np.clip(np.asarray(theta, dtype=float), 0.0, 1.0)
    return t * t


# -- manufactured 2D problem --------------------------------------------------


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact fields ``(t, x, y) -> value``; vector fields return component tuples."""

    p: Callable
    theta: Callable
    s: Callable
    q: Callable
    u: Callable
    f_src: Callable
    f2: Callable


def _bubble(x, y):
    return x * (1 - x) * y * (1 - y)


def manufactured_source(t, x, y):
    """Right-hand side of the saturation equation for the 2D manufactured solution."""
    return (
        2 * t * x**2 * (1 - x) ** 2 * y**2 * (1 - y) ** 2
        + 2 * t * x * (1 - x)
        + 2 * t * y * (1 - y)
        + t**2 * y**3 * (1 - y) ** 3 * (10 * x**4 - 20 * x**3 + 12 * x**2 - 2 * x)
        + t**2 * x**3 * (1 - x) ** 3 * (10 * y**4 - 20 * y**3 + 12 * y**2 - 2 * y)
    )


def _manufactured_exact() -> ManufacturedSolution:
    def p(t, x, y):
        return _bubble(x, y) + 0.0 * t

    def theta(t, x, y):
        return t * _bubble(x, y)

    def s(t, x, y):
        return theta(t, x, y) ** 2

    def grad_bubble(x, y):
        return (1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y)

    def u(t, x, y):
        gx, gy = grad_bubble(x, y)
        return -gx + 0.0 * t, -gy + 0.0 * t

    def q(t, x, y):
        gx, gy = grad_bubble(x, y)
        sat = s(t, x, y)
        return -t * gx - sat * gx, -t * gy - sat * gy

    def f2(x, y):
        return 2 * x * (1 - x) + 2 * y * (1 - y)

    return ManufacturedSolution(p=p, theta=theta, s=s, q=q, u=u, f_src=manufactured_source, f2=f2)


def builtin_manufactured_2d(t_end: float = 1.0) -> tuple[CoefficientSet, ManufacturedSolution]:
    """Coefficients and exact solution of the 2D convergence test on the unit square.

    ``p = x(1-x)y(1-y)``, ``theta = t p``, ``s = theta**2``, unit mobilities
    (so ``a = 1`` and ``f_w = s``), no gravity terms.
    """
    exact = _manufactured_exact()
    f2_cache: dict = {}

    def f2(sat, grid):
        key = (grid.dim, grid.extents, grid.counts)
        if key not in f2_cache:
            f2_cache[key] = project_p0(grid, exact.f2)
        return f2_cache[key]

    tg, wg = np.polynomial.legendre.leggauss(2)

    def f_src(t0, t1, grid):
        # source is quadratic in t, so 2-point Gauss gives the exact time average
        times = 0.5 * (t1 - t0) * (tg + 1) + t0
        return sum(0.5 * w * project_p0(grid, lambda x, y, t=t: manufactured_source(t, x, y))
                   for t, w in zip(times, wg))

    theta_max = t_end / 16.0
    coeffs = CoefficientSet(
        s=clipped_square,
        a=lambda sat: np.ones_like(np.asarray(sat, dtype=float)),
        f_w=lambda sat: np.asarray(sat, dtype=float).copy(),
        f2=f2,
        f_src=f_src,
        theta_range=(0.0, theta_max),
        L_s=2.0 * theta_max,
        a_lo=1.0,
        a_hi=1.0,
        L_a=0.0,
        L_fw=1.0,
        M_fw=1.0,
        L_f1=0.0,
        L_f2=0.0,
        L_f3=0.0,
        name="manufactured2d",
    )
    return coeffs, exact


def manufactured_bc() -> BoundaryConditions:
    """Homogeneous Dirichlet data for p and theta on all four sides."""
    return BoundaryConditions()


# -- 3D injection problem -----------------------------------------------------


@dataclass(frozen=True)
class InjectionSetup:
    """Boundary and initial data accompanying :func:`builtin_injection_3d`."""

    bc: BoundaryConditions
    s_init: float
    theta_init: float
    rate: float
    tau: float
    t_end: float
    L: float
    time_unit: float


def builtin_injection_3d(
    counts=(20, 20, 20),
    rate: float = 1e-5,
    s_init: float = 0.3,
    mobility: str = "dimensional",
    k: float = 1e-6,
    mu_w: float = 1.0,
    mu_o: float = 10.0,
    p_right: float = 10.0,
    inject_water: bool = True,
    time_unit: float = DAY,
) -> tuple[CoefficientSet, InjectionSetup]:
    """Water injection into the unit cube.

    Relative permeabilities ``s**2`` and ``(1-s)**2``, ``s(theta) = theta**2``,
    pressure 0 on ``x = 0`` and ``p_right`` on ``x = 1``, no flow elsewhere for
    the pressure and everywhere for theta. The injection ``rate`` (volume per
    time unit) enters the center cell of the grid with ``counts``.

    The defaults measure time in days and start from a uniform water
    saturation of 0.3. At ``s_init = 0`` the iteration cannot move away from
    the flat part of ``s`` (``s'(0) = 0``) and stalls, and the literal
    ``a = k / (s**2 + (1-s)**2)`` with ``k = 1e-6`` drives face fluxes of
    order ``1e7`` for a pressure drop of 10, so both are opt-in only.

    Args:
        mobility: ``"dimensional"`` uses ``a(s) = 1 / (k (s**2/mu_w + (1-s)**2/mu_o))``
            with viscosity-weighted ``f_w``; ``"literal"`` uses
            ``a(s) = k / (s**2 + (1-s)**2)`` and ``f_w = s**2 / (s**2 + (1-s)**2)``.
        inject_water: also add the injected volume to the saturation balance.
        time_unit: seconds per model time unit; the default step of half a day
            and end time of 50 days are expressed in this unit.
    """
    if mobility == "literal":
        def a(sat):
            sat = np.clip(np.asarray(sat, dtype=float), 0.0, 1.0)
            return k / (sat**2 + (1 - sat) ** 2)

        a_lo, a_hi = k, 2 * k
        L_a = k * _max_abs_derivative(lambda z: 1 / (z**2 + (1 - z) ** 2))
    elif mobility == "dimensional":
        def a(sat):
            sat = np.clip(np.asarray(sat, dtype=float), 0.0, 1.0)
            return 1.0 / (k * (sat**2 / mu_w + (1 - sat) ** 2 / mu_o))

        lam = lambda z: z**2 / mu_w + (1 - z) ** 2 / mu_o  # noqa: E731
        zz = np.linspace(0, 1, 100_001)
        a_lo, a_hi = float(1 / (k * lam(zz).max())), float(1 / (k * lam(zz).min()))
        L_a = _max_abs_derivative(lambda z: 1 / (k * lam(z)))
    else:
        raise ValueError(f"unknown mobility variant {mobility!r}")

    def f_w(sat):
        sat = np.clip(np.asarray(sat, dtype=float), 0.0, 1.0)
        if mobility == "dimensional":
            lw, lo = sat**2 / mu_w, (1 - sat) ** 2 / mu_o
        else:
            lw, lo = sat**2, (1 - sat) ** 2
        return lw / (lw + lo)

    if mobility == "dimensional":
        L_fw = _max_abs_derivative(lambda z: (z**2 / mu_w) / (z**2 / mu_w + (1 - z) ** 2 / mu_o))
    else:
        L_fw = _max_abs_derivative(lambda z: z**2 / (z**2 + (1 - z) ** 2))

    def injection(grid):
        out = np.zeros(grid.n_cells)
        out[grid.center_cell()] = rate / grid.cell_volume
        return out

    def f2(sat, grid):
        return injection(grid)

    f_src = None
    if inject_water:
        def f_src(t0, t1, grid):
            return injection(grid)

    coeffs = CoefficientSet(
        s=clipped_square,
        a=a,
        f_w=f_w,
        f2=f2,
        f_src=f_src,
        theta_range=(-0.5, 1.5),
        L_s=2.0,
        a_lo=a_lo,
        a_hi=a_hi,
        L_a=L_a,
        L_fw=L_fw,
        M_fw=1.0,
        L_f1=0.0,
        L_f2=0.0,
        L_f3=0.0,
        name="injection3d",
    )
    pressure = {side: NO_FLOW for side in ("y-lo", "y-hi", "z-lo", "z-hi")}
    pressure["x-lo"] = SideBC("dirichlet", 0.0)
    pressure["x-hi"] = SideBC("dirichlet", p_right)
    theta = {side: NO_FLOW for side in ("x-lo", "x-hi", "y-lo", "y-hi", "z-lo", "z-hi")}
    setup = InjectionSetup(
        bc=BoundaryConditions(pressure=pressure, theta=theta),
        s_init=s_init,
        theta_init=math.sqrt(s_init),
        rate=rate,
        tau=0.5 * DAY / time_unit,
        t_end=50.0 * DAY / time_unit,
        L=2.0,
        time_unit=time_unit,
    )
    return coeffs, setup


def _max_abs_derivative(func, n=200_001):
    z = np.linspace(0.0, 1.0, n)
    v = func(z)
    return float(np.max(np.abs(np.diff(v)) / np.diff(z)) * (1 + 1e-6))


# -- Kirchhoff transform ------------------------------------------------------


def complementary_pressure(
    p_cap, lam_w, lam_n, s_w: float, dp_cap=None, tol: float = 1e-10, weight_by_lam_n: bool = True
) -> float:
    """Complementary pressure ``-int_0^s_w f_w lam_n p_cap'(xi) dxi``.

    ``p_cap'`` is taken from ``dp_cap`` when given, otherwise approximated by
    central differences of ``p_cap``.
    """
    if not 0.0 <= s_w <= 1.0:
        raise ValueError("s_w must lie in [0, 1]")
    if s_w == 0.0:
        return 0.0
    if dp_cap is None:
        def dp_cap(xi, eps=1e-6):
            lo = max(xi - eps, 0.0)
            hi = min(xi + eps, 1.0)
            return (p_cap(hi) - p_cap(lo)) / (hi - lo)

    def integrand(xi):
        lw, ln = lam_w(xi), lam_n(xi)
        total = lw + ln
        fw = lw / total if total > 0 else 0.0
        return fw * (ln if weight_by_lam_n else 1.0) * dp_cap(xi)

    try:
        val, err = integrate.quad(integrand, 0.0, s_w, epsabs=tol, epsrel=0.0, limit=200)
    except Exception as exc:  # integrand blew up inside quad
        raise QuadratureFailure(str(exc)) from exc
    if not math.isfinite(val) or err > 10 * tol:
        raise QuadratureFailure(f"quadrature did not reach tolerance {tol} (estimate {err:.3g})")
    return -val


def global_pressure_shift(p_cap, lam_w, lam_n, s_w: float, dp_cap=None, tol: float = 1e-10) -> float:
    """The term ``-int_0^s_w f_w p_cap'(xi) dxi`` that turns p_n into the global pressure."""
    if not 0.0 <= s_w <= 1.0:
        raise ValueError("s_w must lie in [0, 1]")
    return complementary_pressure(p_cap, lam_w, lam_n, s_w, dp_cap, tol, weight_by_lam_n=False)
