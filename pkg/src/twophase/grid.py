"""Axis-aligned structured grids in 2D and 3D.

Cells are numbered lexicographically with the x index running fastest.
Faces are grouped by the axis of their normal (all x-faces first, then y,
then z) and numbered lexicographically inside each group. Every face carries
a fixed global normal pointing in the positive axis direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sps

from .errors import DegenerateExtent, IndexOutOfRange, InvalidDimension

AXIS_NAMES = ("x", "y", "z")


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform tensor-product grid on a box.

    Attributes:
        dim: spatial dimension, 2 or 3.
        extents: per-axis ``(lo, hi)`` intervals.
        counts: per-axis number of cells.
    """

    dim: int
    extents: tuple[tuple[float, float], ...]
    counts: tuple[int, ...]
    h: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise InvalidDimension(f"dim must be 2 or 3, got {self.dim}")
        if len(self.extents) != self.dim or len(self.counts) != self.dim:
            raise InvalidDimension("extents and counts must have one entry per axis")
        for (lo, hi), n in zip(self.extents, self.counts):
            if not hi > lo:
                raise DegenerateExtent(f"empty interval [{lo}, {hi}]")
            if int(n) < 1:
                raise DegenerateExtent(f"cell count must be >= 1, got {n}")
        h = np.array([(hi - lo) / n for (lo, hi), n in zip(self.extents, self.counts)])
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    # -- sizes -------------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def faces_per_axis(self) -> tuple[int, ...]:
        out = []
        for axis in range(self.dim):
            shape = list(self.counts)
            shape[axis] += 1
            out.append(int(np.prod(shape)))
        return tuple(out)

    @cached_property
    def face_offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.faces_per_axis)]))

    @property
    def n_faces(self) -> int:
        return self.face_offsets[-1]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def axis_face_area(self) -> np.ndarray:
        """Measure of a face normal to each axis."""
        return np.array([self.cell_volume / self.h[a] for a in range(self.dim)])

    @property
    def lo(self) -> np.ndarray:
        return np.array([e[0] for e in self.extents], dtype=float)

    # -- index helpers -----------------------------------------------------

    def cell_index(self, ijk: Sequence[int]) -> int:
        idx = 0
        stride = 1
        for a in range(self.dim):
            if not 0 <= ijk[a] < self.counts[a]:
                raise IndexOutOfRange(f"cell multi-index {tuple(ijk)} out of range")
            idx += int(ijk[a]) * stride
            stride *= self.counts[a]
        return idx

    def cell_multi_index(self, cell: int) -> tuple[int, ...]:
        self._check_cell(cell)
        out = []
        for a in range(self.dim):
            out.append(cell % self.counts[a])
            cell //= self.counts[a]
        return tuple(out)

    def _check_cell(self, cell):
        if not 0 <= cell < self.n_cells:
            raise IndexOutOfRange(f"cell {cell} not in [0, {self.n_cells})")

    def _check_face(self, face):
        if not 0 <= face < self.n_faces:
            raise IndexOutOfRange(f"face {face} not in [0, {self.n_faces})")

    # -- geometry ----------------------------------------------------------

    def cell_measure(self, cell: int) -> float:
        self._check_cell(cell)
        return self.cell_volume

    def face_measure(self, face: int) -> float:
        self._check_face(face)
        return float(self.axis_face_area[self.face_axis[face]])

    @cached_property
    def cell_multi_indices(self) -> np.ndarray:
        """``(n_cells, dim)`` integer array of cell multi-indices."""
        grids = np.meshgrid(*[np.arange(n) for n in self.counts], indexing="ij")
        # ravel in Fortran order so that the x index runs fastest
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.lo + (self.cell_multi_indices + 0.5) * self.h

    @cached_property
    def face_axis(self) -> np.ndarray:
        return np.repeat(np.arange(self.dim), self.faces_per_axis)

    @cached_property
    def face_multi_indices(self) -> np.ndarray:
        """``(n_faces, dim)`` multi-index of each face in its axis block."""
        blocks = []
        for axis in range(self.dim):
            shape = list(self.counts)
            shape[axis] += 1
            grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
            blocks.append(np.stack([g.ravel(order="F") for g in grids], axis=1))
        return np.concatenate(blocks, axis=0)

    @cached_property
    def face_centers(self) -> np.ndarray:
        offset = np.full((self.n_faces, self.dim), 0.5)
        offset[np.arange(self.n_faces), self.face_axis] = 0.0
        return self.lo + (self.face_multi_indices + offset) * self.h

    def _face_index(self, axis, idx):
        """Vectorized face numbering for multi-indices ``idx`` (n, dim)."""
        shape = list(self.counts)
        shape[axis] += 1
        flat = np.zeros(len(idx), dtype=np.int64)
        stride = 1
        for a in range(self.dim):
            flat += idx[:, a] * stride
            stride *= shape[a]
        return self.face_offsets[axis] + flat

    @cached_property
    def cell_faces(self) -> np.ndarray:
        """``(n_cells, 2*dim)`` faces of each cell ordered (x-lo, x-hi, y-lo, ...)."""
        mi = self.cell_multi_indices
        cols = []
        for axis in range(self.dim):
            cols.append(self._face_index(axis, mi))
            hi = mi.copy()
            hi[:, axis] += 1
            cols.append(self._face_index(axis, hi))
        return np.stack(cols, axis=1)

    @cached_property
    def cell_face_signs(self) -> np.ndarray:
        """Incidence signs matching :attr:`cell_faces`: -1 on lo faces, +1 on hi faces."""
        return np.tile(np.array([-1, 1] * self.dim), (self.n_cells, 1))

    @cached_property
    def face_cells(self) -> np.ndarray:
        """``(n_faces, 2)`` array ``(cell below, cell above)`` along the face axis; -1 if absent."""
        out = np.full((self.n_faces, 2), -1, dtype=np.int64)
        faces = self.cell_faces
        for axis in range(self.dim):
            out[faces[:, 2 * axis + 1], 0] = np.arange(self.n_cells)
            out[faces[:, 2 * axis], 1] = np.arange(self.n_cells)
        return out

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero((self.face_cells < 0).any(axis=1))

    @cached_property
    def outward_sign(self) -> np.ndarray:
        """+1 on hi-side boundary faces, -1 on lo-side, 0 on interior faces."""
        out = np.zeros(self.n_faces, dtype=np.int64)
        fc = self.face_cells
        out[fc[:, 1] < 0] = 1
        out[fc[:, 0] < 0] = -1
        return out

    def side_faces(self, side: str) -> np.ndarray:
        """Boundary faces on a named side such as ``"x-lo"`` or ``"z-hi"``."""
        try:
            name, end = side.split("-")
            axis = AXIS_NAMES.index(name)
        except ValueError:
            raise ValueError(f"unknown boundary side {side!r}") from None
        if axis >= self.dim or end not in ("lo", "hi"):
            raise ValueError(f"unknown boundary side {side!r}")
        pos = 0 if end == "lo" else self.counts[axis]
        mask = (self.face_axis == axis) & (self.face_multi_indices[:, axis] == pos)
        return np.flatnonzero(mask)

    @property
    def sides(self) -> tuple[str, ...]:
        return tuple(f"{AXIS_NAMES[a]}-{e}" for a in range(self.dim) for e in ("lo", "hi"))

    def cells_of_face(self, face: int) -> list[tuple[int, int]]:
        """Adjacent cells of ``face`` with the incidence sign seen from each cell."""
        self._check_face(face)
        below, above = self.face_cells[face]
        out = []
        if below >= 0:
            out.append((int(below), 1))
        if above >= 0:
            out.append((int(above), -1))
        return out

    def faces_of_cell(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        self._check_cell(cell)
        return self.cell_faces[cell].copy(), self.cell_face_signs[cell].copy()

    @cached_property
    def incidence(self) -> sps.csr_matrix:
        """Signed cell-face incidence, shape ``(n_cells, n_faces)``."""
        rows = np.repeat(np.arange(self.n_cells), 2 * self.dim)
        mat = sps.csr_matrix(
            (self.cell_face_signs.ravel().astype(float), (rows, self.cell_faces.ravel())),
            shape=(self.n_cells, self.n_faces),
        )
        return mat

    def center_cell(self, point: Sequence[float] | None = None) -> int:
        """Index of the cell containing ``point`` (default: the box center).

        Points on an interior cell boundary go to the cell above.
        """
        if point is None:
            point = [(lo + hi) / 2 for lo, hi in self.extents]
        ijk = np.floor((np.asarray(point, dtype=float) - self.lo) / self.h).astype(int)
        ijk = np.clip(ijk, 0, np.asarray(self.counts) - 1)
        return self.cell_index(ijk)


def build_grid(dim: int, extents: Sequence[Sequence[float]], counts: Sequence[int]) -> StructuredGrid:
    """Build a structured grid, validating dimension and extents."""
    if dim not in (2, 3):
        raise InvalidDimension(f"dim must be 2 or 3, got {dim}")
    extents = tuple((float(lo), float(hi)) for lo, hi in extents)
    counts = tuple(int(n) for n in counts)
    return StructuredGrid(dim, extents, counts)


def unit_grid(counts: Sequence[int]) -> StructuredGrid:
    """Grid on the unit square or cube."""
    return build_grid(len(counts), [(0.0, 1.0)] * len(counts), counts)
