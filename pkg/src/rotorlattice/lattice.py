"""Periodic lattice geometry: indexing, neighbors, edges and commuting classes."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class LatticeError(ValueError):
    """Invalid lattice construction or partition request."""


@dataclass(frozen=True)
class EdgeClass:
    """Vertex-disjoint set of edges ``(i, i + e_axis)`` whose base coordinate has fixed parity."""

    axis: int
    parity: int
    edges: np.ndarray  # (m, 2) int64, rows (i, i + e_axis)


@dataclass(frozen=True)
class SublatticeClass:
    """Edges ``(i, i + e_axis)`` with base sites congruent to ``offset`` modulo ``stride``."""

    axis: int
    offset: tuple[int, ...]
    stride: int
    edges: np.ndarray

    @property
    def base_sites(self) -> np.ndarray:
        return self.edges[:, 0]


class TorusLattice:
    """Periodic lattice ``(Z / L Z)^N``.

    Sites are numbered row-major with axis 0 varying fastest, so the site id of
    coordinates ``(c_0, ..., c_{N-1})`` is ``sum_a c_a L**a``.  Axes are 0-based.
    """

    def __init__(self, dim: int, side: int):
        if int(dim) != dim or dim < 1:
            raise LatticeError(f"dimension must be a positive integer, got {dim}")
        if int(side) != side or side < 4:
            raise LatticeError(f"side length must be an integer >= 4, got {side}")
        self.dim = int(dim)
        self.side = int(side)
        self.n_sites = self.side**self.dim
        self._strides = self.side ** np.arange(self.dim, dtype=np.int64)

    def __repr__(self) -> str:
        return f"TorusLattice(dim={self.dim}, side={self.side})"

    def __eq__(self, other) -> bool:
        return isinstance(other, TorusLattice) and (self.dim, self.side) == (other.dim, other.side)

    def __hash__(self) -> int:
        return hash((self.dim, self.side))

    @property
    def n_edges(self) -> int:
        return self.dim * self.n_sites

    def site_index(self, coords) -> int:
        c = np.mod(np.asarray(coords, dtype=np.int64), self.side)
        if c.shape != (self.dim,):
            raise LatticeError(f"expected {self.dim} coordinates, got shape {c.shape}")
        return int(c @ self._strides)

    def coords(self, site: int) -> tuple[int, ...]:
        self._check_site(site)
        return tuple(int(v) for v in self.all_coords[site])

    @cached_property
    def all_coords(self) -> np.ndarray:
        """Coordinates of every site, shape ``(n_sites, N)``."""
        ids = np.arange(self.n_sites, dtype=np.int64)
        return (ids[:, None] // self._strides[None, :]) % self.side

    def index_of(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized site id for an array of coordinates with trailing axis N."""
        return np.mod(np.asarray(coords, dtype=np.int64), self.side) @ self._strides

    def shift(self, site, axis: int, step: int = 1):
        """Site reached from ``site`` by ``step`` units along ``axis`` (vectorized)."""
        c = self.all_coords[site].copy()
        c[..., axis] += step
        return self.index_of(c)

    def translate(self, site, offset) -> np.ndarray:
        """Site ``site + offset`` for an offset vector (vectorized over sites)."""
        return self.index_of(self.all_coords[site] + np.asarray(offset, dtype=np.int64))

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(n_sites, 2N)`` table ordered (axis 0 -, axis 0 +, axis 1 -, ...)."""
        sites = np.arange(self.n_sites)
        cols = []
        for axis in range(self.dim):
            cols.append(self.shift(sites, axis, -1))
            cols.append(self.shift(sites, axis, +1))
        return np.stack(cols, axis=1)

    def neighbors(self, site: int) -> list[int]:
        self._check_site(site)
        return [int(v) for v in self.neighbor_table[site]]

    @cached_property
    def edges(self) -> np.ndarray:
        """All unordered edges as rows ``(i, i + e_axis)``, grouped by axis then base site."""
        sites = np.arange(self.n_sites)
        return np.concatenate(
            [np.stack([sites, self.shift(sites, axis)], axis=1) for axis in range(self.dim)]
        )

    @cached_property
    def edge_axes(self) -> np.ndarray:
        return np.repeat(np.arange(self.dim), self.n_sites)

    def edge_classes(self) -> list[EdgeClass]:
        """The 2N parity classes ``(axis, parity)``; requires an even side length."""
        if self.side % 2:
            raise LatticeError(f"edge parity classes need an even side length, got L={self.side}")
        sites = np.arange(self.n_sites)
        out = []
        for axis in range(self.dim):
            for parity in (0, 1):
                base = sites[self.all_coords[:, axis] % 2 == parity]
                edges = np.stack([base, self.shift(base, axis)], axis=1)
                out.append(EdgeClass(axis, parity, edges))
        return out

    def sublattice_classes(self, R: int) -> list[SublatticeClass]:
        """The N (R+2)^N stride classes for a stencil of range R; requires (R+2) | L."""
        stride = int(R) + 2
        if R < 0:
            raise LatticeError(f"range must be nonnegative, got {R}")
        if self.side % stride:
            lo = (self.side // stride) * stride
            raise LatticeError(
                f"stride {stride} must divide L={self.side}; use L a multiple of {stride} "
                f"(e.g. {max(lo, stride)} or {lo + stride})"
            )
        sites = np.arange(self.n_sites)
        residues = self.all_coords % stride
        out = []
        for axis in range(self.dim):
            for offset in itertools.product(range(stride), repeat=self.dim):
                mask = np.all(residues == np.asarray(offset), axis=1)
                base = sites[mask]
                edges = np.stack([base, self.shift(base, axis)], axis=1)
                out.append(SublatticeClass(axis, tuple(offset), stride, edges))
        return out

    def box(self, ell: int, origin=None) -> np.ndarray:
        """Sites of the box ``origin + {0..ell-1}^N``."""
        if ell < 1 or ell > self.side:
            raise LatticeError(f"box side {ell} must lie in [1, {self.side}]")
        origin = np.zeros(self.dim, dtype=np.int64) if origin is None else np.asarray(origin)
        grid = np.array(list(itertools.product(range(ell), repeat=self.dim)), dtype=np.int64)
        return np.sort(self.index_of(grid + origin))

    def as_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape trailing site axis to an N-d grid (grid axis ``-1`` is lattice axis 0)."""
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + (self.side,) * self.dim)

    def from_grid(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid)
        return grid.reshape(grid.shape[: grid.ndim - self.dim] + (self.n_sites,))

    def _check_site(self, site: int) -> None:
        if not 0 <= site < self.n_sites:
            raise LatticeError(f"site {site} out of range [0, {self.n_sites})")
