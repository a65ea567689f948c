"""Block saddle-point systems of the mixed method.

Every linear solve has the form::

    M x - B^T y = r_flux      (flux unknowns x, one per face)
    B x + D y   = r_scalar    (scalar unknowns y, one per cell)

with ``M`` symmetric positive definite, ``B`` the divergence matrix and ``D``
a nonnegative diagonal. Faces with prescribed flux values are eliminated
before factorization.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import ConstraintConflict, SingularSystem


@dataclass(frozen=True)
class SaddleSystem:
    M: sps.spmatrix
    B: sps.spmatrix
    rhs_flux: np.ndarray
    rhs_scalar: np.ndarray
    D: Optional[np.ndarray] = None
    constrained_faces: Sequence[tuple[int, float]] = ()
    scalar_weights: Optional[np.ndarray] = None
    pin_mean: Optional[bool] = None

    @property
    def n_flux(self) -> int:
        return self.M.shape[0]

    @property
    def n_scalar(self) -> int:
        return self.B.shape[0]

    def diagonal(self) -> np.ndarray:
        if self.D is None:
            return np.zeros(self.n_scalar)
        return np.broadcast_to(np.asarray(self.D, dtype=float), (self.n_scalar,))


def merge_constraints(constraints) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique constrained faces and their values; rejects contradictions."""
    values: dict[int, float] = {}
    for face, val in constraints:
        face = int(face)
        val = float(val)
        if face in values and values[face] != val:
            raise ConstraintConflict(f"face {face} constrained to both {values[face]} and {val}")
        values[face] = val
    faces = np.array(sorted(values), dtype=np.int64)
    return faces, np.array([values[f] for f in faces], dtype=float)


def _needs_gauge(sys: SaddleSystem, faces: np.ndarray) -> bool:
    if sys.pin_mean is not None:
        return sys.pin_mean
    if np.any(sys.diagonal() > 0):
        return False
    # a face with a single incident cell is a boundary face; if any of them is
    # free, Dirichlet data fixes the scalar level
    B = sps.csc_matrix(sys.B)
    nnz = np.diff(B.indptr)
    boundary = np.flatnonzero(nnz == 1)
    free = np.setdiff1d(boundary, faces, assume_unique=False)
    return free.size == 0


def _matrix_key(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class FactorizationCache:
    """Keeps the most recent LU factorization per slot.

    The saturation system of the L-scheme never changes within a run, and the
    pressure system only changes when ``a(s)`` does, so reusing factors saves
    most of the work.

    When ``precondition`` is on and a slot holds factors of a matrix with the
    same sparsity layout but different values, those stale factors are used
    to precondition GMRES. If GMRES reaches ``rtol`` within ``max_krylov``
    iterations the old factors are kept, otherwise the matrix is refactored.
    """

    slots: dict = field(default_factory=dict)
    precondition: bool = False
    rtol: float = 1e-13
    max_krylov: int = 20
    hits: int = 0
    misses: int = 0
    krylov_solves: int = 0

    def get(self, slot, key):
        entry = self.slots.get(slot)
        if entry is not None and entry[0] == key:
            self.hits += 1
            return entry[2]
        return None

    def stale(self, slot, layout):
        entry = self.slots.get(slot)
        if self.precondition and entry is not None and entry[1] == layout:
            return entry[2]
        return None

    def put(self, slot, key, lu, layout=None):
        self.misses += 1
        self.slots[slot] = (key, layout, lu)


def _krylov(A, b, lu, rtol, maxiter):
    """GMRES with a (possibly stale) LU as right preconditioner; None on failure."""
    P = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    x0 = lu.solve(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    x, info = spla.gmres(A, b, x0=x0, M=P, rtol=rtol, atol=0.0, restart=maxiter, maxiter=1)
    if info != 0 or np.linalg.norm(A @ x - b) > 10 * rtol * bnorm:
        return None
    return x


def solve_saddle(
    sys: SaddleSystem,
    cache: Optional[FactorizationCache] = None,
    slot: str = "default",
) -> tuple[np.ndarray, np.ndarray]:
    """Solve a :class:`SaddleSystem` by sparse LU on the reduced block matrix.

    Returns:
        ``(flux, scalar)``; constrained faces carry exactly their prescribed value.
    """
    nf, nc = sys.n_flux, sys.n_scalar
    faces, values = merge_constraints(sys.constrained_faces)
    free = np.setdiff1d(np.arange(nf), faces)
    gauge = _needs_gauge(sys, faces)

    M = sps.csr_matrix(sys.M)
    B = sps.csr_matrix(sys.B)
    d = sys.diagonal()
    x_fixed = np.zeros(nf)
    x_fixed[faces] = values

    Mff = M[free][:, free]
    Bf = B[:, free]
    r1 = np.asarray(sys.rhs_flux, dtype=float)[free] - M[free] @ x_fixed
    r2 = np.asarray(sys.rhs_scalar, dtype=float) - B @ x_fixed

    blocks = [[Mff, -Bf.T], [Bf, sps.diags(d)]]
    rhs = [r1, r2]
    if gauge:
        w = np.ones(nc) if sys.scalar_weights is None else np.asarray(sys.scalar_weights, float)
        wcol = sps.csr_matrix(w.reshape(-1, 1))
        blocks = [
            [Mff, -Bf.T, None],
            [Bf, sps.diags(d), wcol],
            [None, wcol.T, None],
        ]
        rhs.append(np.zeros(1))
    A = sps.bmat(blocks, format="csc")
    b = np.concatenate(rhs)

    layout = _matrix_key(free, Mff.indices, Bf.indices, np.array([gauge]))
    key = _matrix_key(free, Mff.data, Mff.indices, Bf.data, Bf.indices, d, np.array([gauge]))
    lu = cache.get(slot, key) if cache is not None else None
    sol = None
    if lu is None and cache is not None:
        old = cache.stale(slot, layout)
        if old is not None:
            sol = _krylov(A, b, old, cache.rtol, cache.max_krylov)
            if sol is not None:
                cache.krylov_solves += 1
    if sol is None and lu is None:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                lu = spla.splu(A)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularSystem(f"factorization failed: {exc}") from exc
        if cache is not None:
            cache.put(slot, key, lu, layout)
    if sol is None:
        sol = lu.solve(b)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("solution contains non-finite values")

    flux = x_fixed.copy()
    flux[free] = sol[: free.size]
    scalar = sol[free.size: free.size + nc]
    return flux, scalar


def saddle_residuals(sys: SaddleSystem, flux, scalar) -> tuple[float, float]:
    """Max-norm residuals of both block equations on the free faces and all cells."""
    faces, _ = merge_constraints(sys.constrained_faces)
    free = np.setdiff1d(np.arange(sys.n_flux), faces)
    r1 = sys.M @ flux - sys.B.T @ scalar - sys.rhs_flux
    r2 = sys.B @ flux + sys.diagonal() * scalar - sys.rhs_scalar
    r1 = r1[free]
    return float(np.abs(r1).max(initial=0.0)), float(np.abs(r2).max(initial=0.0))
