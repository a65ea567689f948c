"""Piecewise constants (P0) and lowest-order Raviart-Thomas (RT0) fields.

P0 fields are stored as one value per cell. RT0 fields are stored as one
value per face: the total flux of the vector field through that face along
the face's global (positive-axis) normal. With that scaling the divergence
matrix is the plain signed incidence matrix.

On a rectangular cell the RT0 basis function of face ``f`` normal to axis
``a`` has a single nonzero component ``a`` which is linear in ``x_a``, equals
``1/|f|`` on ``f`` and vanishes on the opposite face.

Scalar test functions for the P0 space are the cell indicators, so
``<p_h, div v_h>`` is ``B.T @ p`` and ``<g, w_h>`` is ``|T| * P_h g``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sps

from .errors import NonPositiveWeight, QuadratureFailure
from .grid import StructuredGrid

ScalarFunction = Callable[..., np.ndarray]
VectorFunction = Callable[..., object]

_GAUSS = {n: np.polynomial.legendre.leggauss(n) for n in range(1, 7)}


def gauss_rule(order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights mapped to ``[0, 1]``."""
    x, w = _GAUSS[order]
    return 0.5 * (x + 1.0), 0.5 * w


def cell_quadrature(grid: StructuredGrid, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss points of every cell.

    Returns:
        points of shape ``(n_cells, order**dim, dim)`` and reference weights of
        shape ``(order**dim,)`` summing to one (multiply by the cell measure).
    """
    x, w = gauss_rule(order)
    mesh = np.meshgrid(*([x] * grid.dim), indexing="ij")
    ref = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([w] * grid.dim), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    corner = grid.lo + grid.cell_multi_indices * grid.h
    pts = corner[:, None, :] + ref[None, :, :] * grid.h
    return pts, weights


def face_quadrature(grid: StructuredGrid, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss points on every face, shape ``(n_faces, order**(dim-1), dim)``."""
    x, w = gauss_rule(order)
    nq = order ** (grid.dim - 1)
    pts = np.empty((grid.n_faces, nq, grid.dim))
    mesh = np.meshgrid(*([x] * (grid.dim - 1)), indexing="ij")
    ref = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*([w] * (grid.dim - 1)), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    corner = grid.lo + grid.face_multi_indices * grid.h
    for axis in range(grid.dim):
        sel = grid.face_axis == axis
        tangential = [a for a in range(grid.dim) if a != axis]
        block = np.repeat(corner[sel][:, None, :], nq, axis=1)
        for k, a in enumerate(tangential):
            block[:, :, a] += ref[None, :, k] * grid.h[a]
        pts[sel] = block
    return pts, weights


def _evaluate(f, pts):
    coords = [pts[..., a] for a in range(pts.shape[-1])]
    return f(*coords)


def _finite(values):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise QuadratureFailure("function returned non-finite values at quadrature points")
    return values


def project_p0(grid: StructuredGrid, f: ScalarFunction, order: int = 2) -> np.ndarray:
    """Cell averages of ``f(x, y[, z])`` by tensor Gauss quadrature (the L2 projection)."""
    pts, w = cell_quadrature(grid, order)
    vals = np.broadcast_to(_finite(_evaluate(f, pts)), pts.shape[:2])
    return vals @ w


def project_rt0(grid: StructuredGrid, v: VectorFunction, order: int = 2) -> np.ndarray:
    """Face fluxes ``int_f v . n`` of a vector function returning its components."""
    pts, w = face_quadrature(grid, order)
    dofs = np.empty(grid.n_faces)
    for axis in range(grid.dim):
        sel = grid.face_axis == axis
        comps = _evaluate(v, pts[sel])
        vals = np.broadcast_to(_finite(comps[axis]), pts[sel].shape[:2])
        dofs[sel] = (vals @ w) * grid.axis_face_area[axis]
    return dofs


def assemble_div(grid: StructuredGrid) -> sps.csr_matrix:
    """Divergence matrix ``B`` with ``(B @ dofs)[T] = int_T div v``."""
    return grid.incidence.copy()


def _mass(grid, weight, lumped):
    weight = np.asarray(weight, dtype=float)
    rows, cols, vals = [], [], []
    for axis in range(grid.dim):
        lo = grid.cell_faces[:, 2 * axis]
        hi = grid.cell_faces[:, 2 * axis + 1]
        # |T| / |f|^2 = h_axis / |f|
        scale = weight * grid.h[axis] / grid.axis_face_area[axis]
        if lumped:
            rows += [lo, hi]
            cols += [lo, hi]
            vals += [scale / 2.0, scale / 2.0]
        else:
            rows += [lo, hi, lo, hi]
            cols += [lo, hi, hi, lo]
            vals += [scale / 3.0, scale / 3.0, scale / 6.0, scale / 6.0]
    m = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_faces, grid.n_faces),
    )
    return m.tocsr()


def assemble_mass_rt0(grid: StructuredGrid, weight=None, lumped: bool = False) -> sps.csr_matrix:
    """Weighted RT0 mass matrix ``M[f, g] = sum_T w_T int_T phi_f . phi_g``.

    Args:
        grid: the mesh.
        weight: cellwise positive weight (scalar or one value per cell); 1 if omitted.
        lumped: replace each local 2x2 block by its row sums (diagonal matrix).
    """
    if weight is None:
        weight = np.ones(grid.n_cells)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (grid.n_cells,))
    if not np.all(weight > 0):
        raise NonPositiveWeight("mass-matrix weight must be strictly positive on every cell")
    return _mass(grid, weight, lumped)


def assemble_weighted_coupling(grid: StructuredGrid, weight, lumped: bool = False) -> sps.csr_matrix:
    """Same as the mass matrix but allowing zero or negative cell weights.

    Used for the convective term ``<f_w(s) u, v>`` where ``f_w`` may vanish.
    """
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (grid.n_cells,))
    return _mass(grid, weight, lumped)


def cell_vector_load(grid: StructuredGrid, values) -> np.ndarray:
    """Load ``<c, phi_f>`` for a cellwise-constant vector field ``c`` of shape ``(n_cells, dim)``."""
    values = np.broadcast_to(np.asarray(values, dtype=float), (grid.n_cells, grid.dim))
    load = np.zeros(grid.n_faces)
    for axis in range(grid.dim):
        contrib = values[:, axis] * grid.h[axis] / 2.0
        np.add.at(load, grid.cell_faces[:, 2 * axis], contrib)
        np.add.at(load, grid.cell_faces[:, 2 * axis + 1], contrib)
    return load


def boundary_pressure_load(grid: StructuredGrid, gD, faces=None, order: int = 2) -> np.ndarray:
    """Right-hand side ``-<g, v . n>_Gamma`` of the flux equation for Dirichlet data.

    Args:
        gD: constant or callable ``gD(x, y[, z])``.
        faces: Dirichlet faces; all boundary faces if omitted.

    Returns:
        vector over faces, zero away from ``faces``. Since the basis has normal
        trace ``1/|f|``, the entry is ``-(outward sign) * mean of gD on the face``.
    """
    if faces is None:
        faces = grid.boundary_faces
    faces = np.asarray(faces, dtype=np.int64)
    load = np.zeros(grid.n_faces)
    if faces.size == 0:
        return load
    if callable(gD):
        pts, w = face_quadrature(grid, order)
        vals = np.broadcast_to(_finite(_evaluate(gD, pts[faces])), pts[faces].shape[:2])
        mean = vals @ w
    else:
        mean = np.full(faces.size, float(gD))
    load[faces] = -grid.outward_sign[faces] * mean
    return load


def rt0_cell_vectors(grid: StructuredGrid, dofs) -> np.ndarray:
    """Value of an RT0 field at the cell centers, shape ``(n_cells, dim)``."""
    dofs = np.asarray(dofs, dtype=float)
    out = np.empty((grid.n_cells, grid.dim))
    for axis in range(grid.dim):
        lo = dofs[grid.cell_faces[:, 2 * axis]]
        hi = dofs[grid.cell_faces[:, 2 * axis + 1]]
        out[:, axis] = 0.5 * (lo + hi) / grid.axis_face_area[axis]
    return out


def rt0_eval(grid: StructuredGrid, dofs, pts: np.ndarray) -> np.ndarray:
    """Evaluate an RT0 field at per-cell points ``pts`` of shape ``(n_cells, nq, dim)``."""
    dofs = np.asarray(dofs, dtype=float)
    corner = grid.lo + grid.cell_multi_indices * grid.h
    out = np.empty(pts.shape)
    for axis in range(grid.dim):
        lo = dofs[grid.cell_faces[:, 2 * axis]][:, None]
        hi = dofs[grid.cell_faces[:, 2 * axis + 1]][:, None]
        xi = (pts[..., axis] - corner[:, None, axis]) / grid.h[axis]
        out[..., axis] = (lo * (1.0 - xi) + hi * xi) / grid.axis_face_area[axis]
    return out


def p0_norm(grid: StructuredGrid, values) -> float:
    """L2 norm of a P0 field."""
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(grid.cell_volume * np.dot(values, values)))


def rt0_norm(grid: StructuredGrid, dofs, mass: sps.spmatrix | None = None) -> float:
    """L2 norm of an RT0 field, using the unweighted mass matrix."""
    if mass is None:
        mass = assemble_mass_rt0(grid)
    dofs = np.asarray(dofs, dtype=float)
    return float(np.sqrt(max(dofs @ (mass @ dofs), 0.0)))
