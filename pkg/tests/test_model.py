import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase.errors import CoefficientValidationError
from twophase.grid import unit_grid
from twophase.model import (
    NO_FLOW,
    BoundaryConditions,
    SideBC,
    builtin_injection_3d,
    builtin_manufactured_2d,
    clipped_square,
    complementary_pressure,
    global_pressure_shift,
    manufactured_source,
)

x, y, t = sp.symbols("x y t", real=True)


def _symbolic_manufactured():
    p = x * (1 - x) * y * (1 - y)
    theta = t * p
    s = theta**2
    u = [-sp.diff(p, x), -sp.diff(p, y)]
    q = [-sp.diff(theta, x) + s * u[0], -sp.diff(theta, y) + s * u[1]]
    src = sp.diff(s, t) + sp.diff(q[0], x) + sp.diff(q[1], y)
    f2 = sp.diff(u[0], x) + sp.diff(u[1], y)
    return sp.lambdify((t, x, y), src, "numpy"), sp.lambdify((x, y), f2, "numpy"), q


def test_manufactured_source_matches_symbolic(rng):
    src, _, _ = _symbolic_manufactured()
    pts = rng.uniform(0, 1, (200, 3))
    ours = manufactured_source(pts[:, 0], pts[:, 1], pts[:, 2])
    assert np.allclose(ours, src(pts[:, 0], pts[:, 1], pts[:, 2]), atol=1e-14, rtol=0)


def test_manufactured_exact_fields(rng):
    _, f2, q = _symbolic_manufactured()
    _, exact = builtin_manufactured_2d()
    pts = rng.uniform(0, 1, (50, 3))
    tt, xx, yy = pts.T
    assert np.allclose(exact.f2(xx, yy), f2(xx, yy))
    qx = sp.lambdify((t, x, y), q[0])(tt, xx, yy)
    qy = sp.lambdify((t, x, y), q[1])(tt, xx, yy)
    ex = exact.q(tt, xx, yy)
    assert np.allclose(ex[0], qx) and np.allclose(ex[1], qy)
    assert np.allclose(exact.s(tt, xx, yy), exact.theta(tt, xx, yy) ** 2)


def test_manufactured_time_averaged_source_is_exact():
    coeffs, _ = builtin_manufactured_2d()
    g = unit_grid((2, 2))
    avg = coeffs.f_src(0.2, 0.4, g)
    # Simpson is exact for the quadratic-in-time source
    from twophase.fespace import project_p0
    ref = sum(w * project_p0(g, lambda a, b, tt=tt: manufactured_source(tt, a, b))
              for tt, w in ((0.2, 1 / 6), (0.3, 4 / 6), (0.4, 1 / 6)))
    assert np.allclose(avg, ref, atol=1e-15)


def test_manufactured_metadata():
    coeffs, _ = builtin_manufactured_2d(1.0)
    assert coeffs.L_s == pytest.approx(0.125)
    coeffs.validate()


def test_clipped_square():
    assert np.allclose(clipped_square([-1.0, 0.5, 2.0]), [0.0, 0.25, 1.0])


def test_validate_rejects_wrong_lipschitz():
    coeffs, _ = builtin_manufactured_2d()
    from dataclasses import replace
    with pytest.raises(CoefficientValidationError):
        replace(coeffs, L_s=0.01).validate()
    with pytest.raises(CoefficientValidationError):
        replace(coeffs, a=lambda s: s - 0.5).validate()
    with pytest.raises(CoefficientValidationError):
        replace(coeffs, s=lambda th: 1 - np.clip(th, 0, 1)).validate()
    with pytest.raises(CoefficientValidationError):
        replace(coeffs, M_fw=0.5).validate()


@pytest.mark.parametrize("mobility", ["dimensional", "literal"])
def test_injection_builtin(mobility):
    coeffs, setup = builtin_injection_3d(counts=(5, 5, 5), mobility=mobility)
    coeffs.validate()
    g = unit_grid((5, 5, 5))
    f2 = coeffs.f2(np.zeros(g.n_cells), g)
    assert np.count_nonzero(f2) == 1
    assert f2[g.center_cell()] * g.cell_volume == pytest.approx(1e-5)
    assert setup.tau == 0.5 and setup.t_end == 50.0 and setup.L == 2.0
    assert setup.theta_init == pytest.approx(np.sqrt(setup.s_init))
    assert setup.bc.side("pressure", "x-hi") == SideBC("dirichlet", 10.0)
    assert setup.bc.side("pressure", "y-lo") == NO_FLOW
    assert all(setup.bc.side("theta", s) == NO_FLOW for s in g.sides)


def test_injection_seconds():
    _, setup = builtin_injection_3d(time_unit=1.0)
    assert setup.tau == 43200.0


def test_injection_unknown_mobility():
    with pytest.raises(ValueError):
        builtin_injection_3d(mobility="other")


def test_boundary_defaults():
    bc = BoundaryConditions()
    assert bc.side("theta", "x-lo") == SideBC("dirichlet", 0.0)
    with pytest.raises(ValueError):
        SideBC("robin")


def test_complementary_pressure_closed_form():
    # lam_w = s, lam_n = 1 - s, p_cap' = -1  =>  theta(s) = s^2/2 - s^3/3
    s = sp.Symbol("s")
    closed = sp.integrate(s * (1 - s), (s, 0, s))
    assert sp.simplify(closed - (s**2 / 2 - s**3 / 3)) == 0
    for sw in (0.0, 0.3, 0.7, 1.0):
        val = complementary_pressure(lambda z: -z, lambda z: z, lambda z: 1 - z, sw, dp_cap=lambda z: -1.0)
        assert val == pytest.approx(sw**2 / 2 - sw**3 / 3, abs=1e-12)


def test_complementary_pressure_finite_differences():
    val = complementary_pressure(lambda z: 1 - z, lambda z: z, lambda z: 1 - z, 0.6)
    assert val == pytest.approx(0.6**2 / 2 - 0.6**3 / 3, abs=1e-8)


def test_global_pressure_shift():
    # f_w = s, p_cap' = -1  =>  shift = s^2 / 2
    val = global_pressure_shift(lambda z: -z, lambda z: z, lambda z: 1 - z, 0.5, dp_cap=lambda z: -1.0)
    assert val == pytest.approx(0.125)
    with pytest.raises(ValueError):
        complementary_pressure(lambda z: z, lambda z: z, lambda z: 1 - z, 1.5)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0, 1), b=st.floats(0, 1))
def test_complementary_pressure_monotone(a, b):
    lo, hi = sorted((a, b))
    args = (lambda z: -z, lambda z: z**2, lambda z: (1 - z) ** 2)
    th_lo = complementary_pressure(*args, lo, dp_cap=lambda z: -1.0)
    th_hi = complementary_pressure(*args, hi, dp_cap=lambda z: -1.0)
    assert th_lo <= th_hi + 1e-12


def test_manufactured_point_values():
    _, exact = builtin_manufactured_2d()
    assert exact.theta(1.0, 0.5, 0.5) == 1 / 16
    assert exact.s(1.0, 0.5, 0.5) == 1 / 256


def test_literal_mobility_values():
    coeffs, _ = builtin_injection_3d(counts=(4, 4, 4), mobility="literal")
    assert np.allclose(coeffs.a(np.array([0.0, 1.0, 0.5])), [1e-6, 1e-6, 2e-6])
    assert coeffs.f_w(np.array([0.5]))[0] == pytest.approx(0.5)
    dim, _ = builtin_injection_3d(counts=(4, 4, 4))
    # water is ten times more mobile than oil
    assert dim.f_w(np.array([0.5]))[0] == pytest.approx(10 / 11)


def test_complementary_pressure_constant_cap():
    for sw in (0.2, 0.9):
        assert complementary_pressure(lambda z: 3.0, lambda z: z, lambda z: 1 - z, sw) == 0.0
