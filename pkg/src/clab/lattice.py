"""Geometry of the d-dimensional discrete torus (Z/side Z)^d.

Sites are stored as row-major integer indices; coordinate tuples are accepted
wherever a single site is expected.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    d: int
    side: int

    def __post_init__(self):
        if self.d < 2:
            raise GeometryError(f"dimension must be >= 2, got {self.d}")
        if self.side < 4 or self.side % 2:
            raise GeometryError(f"side must be an even integer >= 4, got {self.side}")

    @property
    def n_sites(self) -> int:
        return self.side**self.d

    @property
    def half(self) -> int:
        return self.side // 2

    @cached_property
    def strides(self) -> np.ndarray:
        return self.side ** np.arange(self.d - 1, -1, -1, dtype=np.int64)

    def index(self, coords) -> np.ndarray | int:
        """Row-major index of coordinates (reduced modulo side)."""
        c = np.asarray(coords, dtype=np.int64)
        if c.shape[-1] != self.d:
            raise GeometryError(f"expected {self.d} coordinates, got shape {c.shape}")
        idx = (np.mod(c, self.side) * self.strides).sum(axis=-1)
        return int(idx) if idx.ndim == 0 else idx

    def coords(self, index) -> np.ndarray:
        i = np.asarray(index, dtype=np.int64)
        return (i[..., None] // self.strides) % self.side

    @cached_property
    def all_coords(self) -> np.ndarray:
        c = self.coords(np.arange(self.n_sites))
        c.setflags(write=False)
        return c

    def site(self, x) -> int:
        """Normalize a site given as an index or a coordinate sequence."""
        if np.ndim(x) == 0:
            i = int(x)
            if not 0 <= i < self.n_sites:
                raise GeometryError(f"site index {i} out of range")
            return i
        return self.index(x)

    def reduce(self, vec) -> np.ndarray:
        """Minimal image of integer vectors: components in (-side/2, side/2]."""
        r = np.mod(np.asarray(vec, dtype=np.int64), self.side)
        return np.where(r > self.half, r - self.side, r)

    def shift(self, index, vec) -> np.ndarray | int:
        return self.index(self.coords(index) + np.asarray(vec, dtype=np.int64))

    def sup_norm_from(self, center) -> np.ndarray:
        """Sup-norm minimal-image distance of every site from `center`."""
        c = self.coords(self.site(center))
        return np.abs(self.reduce(self.all_coords - c)).max(axis=1)

    def norm_from(self, center) -> np.ndarray:
        c = self.coords(self.site(center))
        return np.linalg.norm(self.reduce(self.all_coords - c), axis=1)

    def neighbor_offsets(self) -> np.ndarray:
        e = np.eye(self.d, dtype=np.int64)
        return np.concatenate([e, -e])

    def neighbors(self, index) -> np.ndarray:
        """Nearest neighbours of each site, shape (..., 2d)."""
        c = self.coords(index)
        return self.index(c[..., None, :] + self.neighbor_offsets())


def displacement(x, y, g: Geometry) -> np.ndarray:
    """Minimal-image displacement y - x; a component equal to side/2 is +side/2."""
    cx = np.asarray(x, dtype=np.int64)
    cy = np.asarray(y, dtype=np.int64)
    if cx.shape[-1:] != (g.d,) or cy.shape[-1:] != (g.d,):
        raise GeometryError(f"dimension mismatch: {cx.shape}, {cy.shape} vs d={g.d}")
    return g.reduce(cy - cx)


def norm(vec) -> np.ndarray | float:
    n = np.linalg.norm(np.asarray(vec, dtype=float), axis=-1)
    return float(n) if np.ndim(n) == 0 else n


def ball(center, R: int, g: Geometry) -> np.ndarray:
    """Sites within sup-norm distance R of `center`, as sorted indices."""
    if R < 0:
        raise GeometryError("radius must be nonnegative")
    if 2 * R + 1 > g.side:
        raise GeometryError(f"ball of radius {R} wraps around a torus of side {g.side}")
    c = g.coords(g.site(center))
    r = np.arange(-R, R + 1)
    offs = np.stack(np.meshgrid(*([r] * g.d), indexing="ij"), axis=-1).reshape(-1, g.d)
    return np.sort(g.index(c + offs))


def outer_boundary(A, g: Geometry) -> np.ndarray:
    """Sites outside A having a nearest neighbour in A."""
    a = np.unique(np.asarray(A, dtype=np.int64))
    if a.size == 0 or a.size >= g.n_sites:
        raise GeometryError("outer boundary needs a nonempty proper subset")
    nb = np.unique(g.neighbors(a).ravel())
    return np.setdiff1d(nb, a)
