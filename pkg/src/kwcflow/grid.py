"""Uniform cell-centred grids on boxes in 1D/2D with zero-flux boundaries.

Fields live on cells as numpy arrays of shape ``grid.shape``. Gradients live
on interior faces: ``face_gradient`` returns one array per axis, the array for
axis ``k`` having ``shape[k] - 1`` entries along that axis. Boundary faces
carry no flux, which is the discrete form of ``Dw . n = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

Flux = tuple  # tuple[np.ndarray, ...], one entry per axis


@dataclass(frozen=True)
class Grid:
    shape: tuple[int, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(s) for s in self.spacing)
        if len(shape) not in (1, 2):
            raise ValueError(f"only 1D and 2D grids are supported, got dim={len(shape)}")
        if len(spacing) != len(shape):
            raise ValueError("spacing must have one entry per axis")
        if any(n < 2 for n in shape):
            raise ValueError(f"every axis needs at least 2 cells, got {shape}")
        if any(not (s > 0 and np.isfinite(s)) for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def unit(cls, shape) -> "Grid":
        """Grid covering the unit box [0, 1]^N."""
        shape = tuple(shape) if np.iterable(shape) else (int(shape),)
        return cls(shape, tuple(1.0 / n for n in shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        """Lebesgue measure of the whole domain."""
        return self.cell_measure * self.size

    def centers(self) -> list[np.ndarray]:
        """Cell-centre coordinates, one broadcastable array per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.shape, self.spacing)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.shape, float(value))

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"field of shape {f.shape} does not live on grid {self.shape}")
        return f

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        s[axis] -= 1
        return tuple(s)

    def check_flux(self, q) -> Flux:
        if len(q) != self.dim:
            raise ValueError(f"flux needs {self.dim} components, got {len(q)}")
        out = []
        for k, qk in enumerate(q):
            qk = np.asarray(qk, dtype=float)
            if qk.shape != self.face_shape(k):
                raise ValueError(
                    f"flux component {k} has shape {qk.shape}, expected {self.face_shape(k)}")
            out.append(qk)
        return tuple(out)

    # -- stencils ---------------------------------------------------------

    def face_gradient(self, f: np.ndarray) -> Flux:
        f = self.check(f)
        return tuple(np.diff(f, axis=k) / h for k, h in enumerate(self.spacing))

    def face_divergence(self, q) -> np.ndarray:
        """Negative L2-adjoint of ``face_gradient`` (zero flux through the boundary)."""
        q = self.check_flux(q)
        out = np.zeros(self.shape)
        for k, (qk, h) in enumerate(zip(q, self.spacing)):
            pad = [(0, 0)] * self.dim
            pad[k] = (1, 1)
            out += np.diff(np.pad(qk, pad), axis=k) / h
        return out

    def neumann_laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.face_divergence(self.face_gradient(f))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(self.check(f) * self.check(g)) * self.cell_measure)

    def face_inner(self, p, q) -> float:
        p, q = self.check_flux(p), self.check_flux(q)
        return float(sum(np.sum(a * b) for a, b in zip(p, q)) * self.cell_measure)

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.inner(f, f)))

    # -- cell-wise gradient assembly --------------------------------------

    def cell_gradient(self, f: np.ndarray) -> np.ndarray:
        """Forward differences placed on cells, zero on the last layer of each axis.

        Returns shape ``(dim, *shape)``. The entry for axis ``k`` at a cell is
        the face gradient across that cell's upper face along ``k``, so each
        interior face is owned by exactly one cell.
        """
        f = self.check(f)
        out = np.zeros((self.dim,) + self.shape)
        for k, dk in enumerate(self.face_gradient(f)):
            idx = [slice(None)] * self.dim
            idx[k] = slice(0, self.shape[k] - 1)
            out[(k,) + tuple(idx)] = dk
        return out

    def cell_to_flux(self, p: np.ndarray) -> Flux:
        """Restrict a cell-placed vector field to the faces owned by each cell."""
        out = []
        for k in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[k] = slice(0, self.shape[k] - 1)
            out.append(np.array(p[(k,) + tuple(idx)]))
        return tuple(out)

    @cached_property
    def difference_matrices(self) -> tuple[sp.csr_matrix, ...]:
        """Sparse face-gradient operators, faces x cells, one per axis (row-major)."""
        mats = []
        for k, h in enumerate(self.spacing):
            eyes = [sp.identity(n, format="csr") for n in self.shape]
            n = self.shape[k]
            d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
            eyes[k] = d1
            m = eyes[0]
            for e in eyes[1:]:
                m = sp.kron(m, e)
            mats.append(sp.csr_matrix(m))
        return tuple(mats)

    @cached_property
    def cell_difference_matrices(self) -> tuple[sp.csr_matrix, ...]:
        """Sparse forms of ``cell_gradient``: cells x cells, one per axis (row-major)."""
        owners = np.arange(self.size).reshape(self.shape)
        mats = []
        for k, dk in enumerate(self.difference_matrices):
            idx = [slice(None)] * self.dim
            idx[k] = slice(0, self.shape[k] - 1)
            rows = owners[tuple(idx)].ravel()
            embed = sp.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))),
                                  shape=(self.size, rows.size))
            mats.append(sp.csr_matrix(embed @ dk))
        return tuple(mats)
