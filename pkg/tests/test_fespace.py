import itertools

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from twophase import fespace
from twophase.errors import NonPositiveWeight, QuadratureFailure
from twophase.grid import build_grid, unit_grid


def _symbolic_local_mass(h):
    """Local RT0 mass matrix of one box cell by exact symbolic integration.

    Basis order: lo/hi face per axis, both oriented along +a. The basis
    function of a face normal to axis ``a`` has component ``a`` equal to
    ``(x_a/h_a)/|f|`` (hi face) or ``(1 - x_a/h_a)/|f|`` (lo face) and zero
    elsewhere.
    """
    dim = len(h)
    xs = sp.symbols(f"x0:{dim}")
    hs = [sp.Rational(v).limit_denominator(10**6) for v in h]
    area = [sp.prod([hs[b] for b in range(dim) if b != a]) for a in range(dim)]
    basis = []
    for a in range(dim):
        for hi in (False, True):
            xi = xs[a] / hs[a]
            comp = (xi if hi else 1 - xi) / area[a]
            basis.append((a, comp))
    n = len(basis)
    M = sp.zeros(n, n)
    for i, j in itertools.product(range(n), repeat=2):
        (ai, ci), (aj, cj) = basis[i], basis[j]
        if ai != aj:
            continue
        expr = ci * cj
        for k in range(dim):
            expr = sp.integrate(expr, (xs[k], 0, hs[k]))
        M[i, j] = expr
    return np.array(M.tolist(), dtype=float)


@pytest.mark.parametrize("counts,extents", [
    ((1, 1), [(0, 1), (0, 1)]),
    ((1, 1), [(0, 0.5), (0, 0.25)]),
    ((1, 1, 1), [(0, 0.5), (0, 0.25), (0, 2.0)]),
])
def test_local_mass_matches_symbolic(counts, extents):
    g = build_grid(len(counts), extents, counts)
    M = fespace.assemble_mass_rt0(g).toarray()
    faces = g.cell_faces[0]
    local = M[np.ix_(faces, faces)]
    oracle = _symbolic_local_mass(g.h)
    assert np.max(np.abs(local - oracle)) <= 1e-12


def test_mass_matches_quadrature_on_random_grid(rng):
    g = build_grid(2, [(0, 1.5), (0, 0.7)], (3, 2))
    w = rng.uniform(0.5, 2.0, g.n_cells)
    M = fespace.assemble_mass_rt0(g, w).toarray()
    # Gauss quadrature of phi_f . phi_g, exact for the quadratic integrand
    pts, wq = fespace.cell_quadrature(g, 2)
    E = np.eye(g.n_faces)
    vals = np.stack([fespace.rt0_eval(g, E[f], pts) for f in range(g.n_faces)])
    oracle = np.einsum("fcqd,gcqd,q,c->fg", vals, vals, wq, w * g.cell_volume)
    assert np.max(np.abs(M - oracle)) <= 1e-12


def test_lumped_mass_row_sums():
    g = unit_grid((3, 4))
    M = fespace.assemble_mass_rt0(g)
    Ml = fespace.assemble_mass_rt0(g, lumped=True)
    assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), Ml.diagonal())
    assert Ml.nnz == g.n_faces


def test_mass_rejects_nonpositive_weight():
    g = unit_grid((2, 2))
    with pytest.raises(NonPositiveWeight):
        fespace.assemble_mass_rt0(g, np.array([1.0, 0.0, 1.0, 1.0]))
    K = fespace.assemble_weighted_coupling(g, np.zeros(g.n_cells))
    assert K.count_nonzero() == 0


def test_gauss_rule_exactness():
    x, w = fespace.gauss_rule(2)
    assert w.sum() == pytest.approx(1.0)
    assert np.dot(w, x**3) == pytest.approx(1 / 4)


def test_project_p0_exact_for_polynomials():
    g = unit_grid((4, 4))
    vals = fespace.project_p0(g, lambda x, y: x * y**2)
    c = g.cell_centers
    h = g.h
    # average of x over a cell is x_c, average of y^2 is y_c^2 + h^2/12
    assert np.allclose(vals, c[:, 0] * (c[:, 1] ** 2 + h[1] ** 2 / 12), atol=1e-15)


def test_project_p0_rejects_nonfinite():
    with pytest.raises(QuadratureFailure):
        fespace.project_p0(unit_grid((2, 2)), lambda x, y: np.full_like(x, np.nan))


def test_commuting_divergence():
    g = build_grid(2, [(0, 1), (0, 2)], (5, 3))

    def v(x, y):
        return x**2 * y, x * y**2

    def div(x, y):
        return 2 * x * y + 2 * x * y

    dofs = fespace.project_rt0(g, v, order=3)
    lhs = fespace.assemble_div(g) @ dofs
    rhs = g.cell_volume * fespace.project_p0(g, div, order=3)
    assert np.allclose(lhs, rhs, atol=1e-14)


def test_rt0_eval_reproduces_linear_fields():
    g = unit_grid((3, 3))

    def v(x, y):
        return 1 + 2 * x, 3 - y

    dofs = fespace.project_rt0(g, v)
    pts, _ = fespace.cell_quadrature(g, 2)
    out = fespace.rt0_eval(g, dofs, pts)
    ex = np.stack(np.broadcast_arrays(*v(pts[..., 0], pts[..., 1])), axis=-1)
    assert np.allclose(out, ex)
    centers = fespace.rt0_cell_vectors(g, dofs)
    assert np.allclose(centers, np.stack(v(g.cell_centers[:, 0], g.cell_centers[:, 1]), axis=1))


def test_rt0_norm_of_constant_field():
    g = unit_grid((4, 2))
    dofs = fespace.project_rt0(g, lambda x, y: (3.0 + 0 * x, 4.0 + 0 * y))
    assert fespace.rt0_norm(g, dofs) == pytest.approx(5.0)
    assert fespace.p0_norm(g, np.full(g.n_cells, 2.0)) == pytest.approx(2.0)


def test_cell_vector_load():
    g = unit_grid((2, 1))
    load = fespace.cell_vector_load(g, np.array([[1.0, 0.0], [1.0, 0.0]]))
    # integral of phi_f over the cell is h_axis / 2 per adjacent cell
    x_faces = np.flatnonzero(g.face_axis == 0)
    assert np.allclose(load[x_faces], [0.25, 0.5, 0.25])
    assert np.allclose(load[g.face_axis == 1], 0.0)


def test_boundary_pressure_load():
    g = unit_grid((2, 2))
    load = fespace.boundary_pressure_load(g, lambda x, y: x + 0 * y)
    right = g.side_faces("x-hi")
    left = g.side_faces("x-lo")
    assert np.allclose(load[right], -1.0)
    assert np.allclose(load[left], 0.0)
    top = g.side_faces("y-hi")
    assert np.allclose(load[top], -g.face_centers[top, 0])
    interior = np.setdiff1d(np.arange(g.n_faces), g.boundary_faces)
    assert np.all(load[interior] == 0)


@settings(max_examples=25, deadline=None)
@given(nx=st.integers(1, 5), ny=st.integers(1, 5), seed=st.integers(0, 10_000))
def test_mass_is_spd(nx, ny, seed):
    g = unit_grid((nx, ny))
    w = np.random.default_rng(seed).uniform(0.1, 10.0, g.n_cells)
    M = fespace.assemble_mass_rt0(g, w)
    assert abs(M - M.T).max() == 0
    assert np.linalg.eigvalsh(M.toarray()).min() > 0


def test_projector_idempotent():
    g = unit_grid((4, 3))
    vals = np.arange(g.n_cells, dtype=float)
    idx = {tuple(m): v for m, v in zip(g.cell_multi_indices, vals)}

    def pc(x, y):
        i = np.minimum((x / g.h[0]).astype(int), g.counts[0] - 1)
        j = np.minimum((y / g.h[1]).astype(int), g.counts[1] - 1)
        return np.vectorize(lambda a, b: idx[(a, b)])(i, j)

    assert np.array_equal(fespace.project_p0(g, pc), vals)


def test_projection_error_is_first_order():
    def f(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    errs = []
    for n in (8, 16, 32):
        g = unit_grid((n, n))
        pts, w = fespace.cell_quadrature(g, 4)
        diff = f(pts[..., 0], pts[..., 1]) - fespace.project_p0(g, f, order=4)[:, None]
        errs.append(np.sqrt(g.cell_volume * np.sum(diff**2 @ w)))
    for a, b in zip(errs, errs[1:]):
        assert b / a == pytest.approx(0.5, abs=0.1)
