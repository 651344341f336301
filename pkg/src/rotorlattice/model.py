"""Quadratic potential, pair fields and the Ito coefficients of the rotor dynamics on a torus."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy import sparse

from .lattice import TorusLattice


class StencilError(ValueError):
    """Malformed or non positive definite precision stencil."""


class PrecisionStencil:
    """Finite-range symmetric translation-invariant precision matrix ``M``.

    Coefficients are keyed by integer offset tuples; mirror offsets are filled
    in automatically and conflicting mirrors are rejected.
    """

    def __init__(self, coefficients: Mapping[tuple, float], dim: int, bound: float | None = None):
        self.dim = int(dim)
        coeffs: dict[tuple[int, ...], float] = {}
        for off, val in coefficients.items():
            off = tuple(int(o) for o in np.atleast_1d(off))
            if len(off) != self.dim:
                raise StencilError(f"offset {off} does not have {self.dim} components")
            val = float(val)
            if not math.isfinite(val):
                raise StencilError(f"coefficient at {off} is not finite")
            for key in (off, tuple(-o for o in off)):
                if key in coeffs and coeffs[key] != val:
                    raise StencilError(f"asymmetric stencil: c{key}={coeffs[key]} but c{off}={val}")
                coeffs[key] = val
        coeffs = {k: v for k, v in coeffs.items() if v != 0.0}
        zero = (0,) * self.dim
        if coeffs.get(zero, 0.0) <= 0.0:
            raise StencilError("center coefficient c(0) must be positive")
        self.coefficients = dict(sorted(coeffs.items()))
        self.range = max(sum(abs(o) for o in off) for off in self.coefficients)
        max_abs = max(abs(v) for v in self.coefficients.values())
        self.bound = max_abs if bound is None else float(bound)
        if max_abs > self.bound:
            raise StencilError(f"coefficient magnitude {max_abs} exceeds declared bound {self.bound}")

    @classmethod
    def diagonal(cls, b: float, dim: int) -> "PrecisionStencil":
        if not b > 0:
            raise StencilError(f"diagonal stencil needs b > 0, got {b}")
        return cls({(0,) * dim: b}, dim)

    @classmethod
    def parse(cls, text: str, dim: int) -> "PrecisionStencil":
        """Parse ``"diagonal b=<real>"`` or ``"o1,..,oN=c; ..."`` entries."""
        text = text.strip()
        m = re.fullmatch(r"diagonal\s+b\s*=\s*(\S+)", text)
        if m:
            try:
                return cls.diagonal(float(m.group(1)), dim)
            except ValueError as exc:
                raise StencilError(f"bad diagonal stencil {text!r}: {exc}") from None
        coeffs: dict[tuple[int, ...], float] = {}
        for entry in filter(None, (e.strip() for e in re.split(r"[;\n]", text))):
            if "=" not in entry:
                raise StencilError(f"stencil entry {entry!r} is not of the form offset=coefficient")
            lhs, rhs = entry.rsplit("=", 1)
            try:
                off = tuple(int(t) for t in lhs.replace("(", "").replace(")", "").split(","))
                coeffs[off] = float(rhs)
            except ValueError:
                raise StencilError(f"cannot parse stencil entry {entry!r}") from None
            if len(off) != dim:
                raise StencilError(f"stencil offset {off} does not match dimension {dim}")
        if not coeffs:
            raise StencilError("empty stencil")
        return cls(coeffs, dim)

    @property
    def center(self) -> float:
        return self.coefficients[(0,) * self.dim]

    @property
    def is_diagonal(self) -> bool:
        return len(self.coefficients) == 1

    @property
    def b(self) -> float | None:
        return self.center if self.is_diagonal else None

    def coefficient(self, offset) -> float:
        return self.coefficients.get(tuple(int(o) for o in offset), 0.0)

    def to_literal(self) -> str:
        if self.is_diagonal:
            return f"diagonal b={self.center!r}"
        return "; ".join(",".join(map(str, k)) + f"={v!r}" for k, v in self.coefficients.items())

    def __repr__(self) -> str:
        return f"PrecisionStencil({self.to_literal()!r}, dim={self.dim})"


class LatticeModel:
    """A stencil bound to a torus: wrapped stencil sums, ``V``, drift and diffusion."""

    def __init__(self, lattice: TorusLattice, stencil: PrecisionStencil):
        if stencil.dim != lattice.dim:
            raise StencilError(f"stencil dimension {stencil.dim} != lattice dimension {lattice.dim}")
        if lattice.side <= 2 * stencil.range:
            raise StencilError(f"side L={lattice.side} must exceed twice the stencil range {stencil.range}")
        self.lattice = lattice
        self.stencil = stencil
        offsets = np.array(list(stencil.coefficients), dtype=np.int64).reshape(-1, lattice.dim)
        self.offsets = offsets
        self.coeffs = np.array(list(stencil.coefficients.values()))
        sites = np.arange(lattice.n_sites)
        # table[i, q] = site i + offsets[q]
        self.table = np.stack([lattice.translate(sites, o) for o in offsets], axis=1)
        self.center = stencil.center
        # coupling along each positive axis direction
        self.axis_coupling = np.array(
            [stencil.coefficient(np.eye(lattice.dim, dtype=int)[k]) for k in range(lattice.dim)]
        )
        if np.any(self.symbol() <= 0):
            raise StencilError(
                f"stencil is not positive definite on the L={lattice.side} torus "
                f"(min symbol {self.symbol().min():.3e})"
            )
        nt = lattice.neighbor_table
        self._minus = nt[:, 0::2]
        self._plus = nt[:, 1::2]

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def is_diagonal(self) -> bool:
        return self.stencil.is_diagonal

    def grad(self, x: np.ndarray) -> np.ndarray:
        """``(Mx)_i`` for every site; batched over leading axes."""
        x = np.asarray(x, dtype=float)
        if self.is_diagonal:
            return self.center * x
        return np.einsum("...iq,q->...i", x[..., self.table], self.coeffs)

    def potential(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(x * self.grad(x), axis=-1)

    def matrix_entry(self, i: int, j: int) -> float:
        hits = np.nonzero(self.table[i] == j)[0]
        return float(self.coeffs[hits[0]]) if hits.size else 0.0

    @cached_property
    def sparse_matrix(self) -> sparse.csr_matrix:
        n = self.n_sites
        rows = np.repeat(np.arange(n), self.table.shape[1])
        return sparse.csr_matrix((np.tile(self.coeffs, n), (rows, self.table.ravel())), shape=(n, n))

    def matrix(self) -> np.ndarray:
        return self.sparse_matrix.toarray()

    @cached_property
    def _kernel_grid(self) -> np.ndarray:
        kern = np.zeros(self.n_sites)
        np.add.at(kern, self.table[0], self.coeffs)
        return self.lattice.as_grid(kern)

    def symbol(self) -> np.ndarray:
        """Eigenvalues of the circulant ``M`` on the frequency grid."""
        return np.fft.fftn(self._kernel_grid).real

    @cached_property
    def green_vector(self) -> np.ndarray:
        """Row 0 of ``G = M^{-1}``: ``G_ij = green_vector[j - i]``."""
        if self.is_diagonal:
            g = np.zeros(self.n_sites)
            g[0] = 1.0 / self.center
            return g
        return self.lattice.from_grid(np.fft.ifftn(1.0 / self.symbol()).real)

    def green(self, i, j):
        """``G_ij`` (vectorized)."""
        lat = self.lattice
        diff = lat.all_coords[np.asarray(j)] - lat.all_coords[np.asarray(i)]
        return self.green_vector[lat.index_of(diff)]

    def green_matrix(self) -> np.ndarray:
        sites = np.arange(self.n_sites)
        return self.green(sites[:, None], sites[None, :])

    def drift(self, x: np.ndarray) -> np.ndarray:
        """Ito drift ``A(x)``; equals ``-N b^2 x`` for ``M = b Id``."""
        g = self.grad(x)
        out = -self.dim * self.center * g
        for k in range(self.dim):
            ck = self.axis_coupling[k]
            if ck:
                out = out + 0.5 * ck * (g[..., self._minus[:, k]] + g[..., self._plus[:, k]])
        return out

    @cached_property
    def drift_matrix(self) -> sparse.csr_matrix:
        """Sparse matrix of the linear map ``x -> A(x)``."""
        n = self.n_sites
        shift = sparse.csr_matrix((n, n))
        eye = sparse.identity(n, format="csr")
        for k in range(self.dim):
            ck = self.axis_coupling[k]
            if ck:
                sm = sparse.csr_matrix((np.ones(n), (np.arange(n), self._minus[:, k])), shape=(n, n))
                sp = sparse.csr_matrix((np.ones(n), (np.arange(n), self._plus[:, k])), shape=(n, n))
                shift = shift + 0.5 * ck * (sm + sp)
        return ((-self.dim * self.center) * eye + shift) @ self.sparse_matrix

    def diffusion(self, x: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """``B(x) dW`` with ``dW`` of shape ``(..., n_sites, N)``; edge ``(i, i+e_k)`` uses ``dW[i, k]``."""
        g = self.grad(x)
        dW = np.asarray(dW, dtype=float)
        out = np.zeros(np.broadcast_shapes(g.shape, dW.shape[:-1]))
        for k in range(self.dim):
            w = dW[..., k]
            minus = self._minus[:, k]
            plus = self._plus[:, k]
            out += g[..., minus] * w[..., minus] - g[..., plus] * w
        return out

    def pair_flow(self, xi, xj, hi, hj, mij, s):
        """Closed-form flow of ``X_ij`` for time ``s`` with frozen affine forcing ``hi, hj``.

        ``hi, hj`` are the parts of ``(Mx)_i, (Mx)_j`` not involving ``x_i, x_j``.
        """
        a = self.center
        w2 = a * a - mij * mij
        w = np.sqrt(w2)
        si = (-a * hi + mij * hj) / w2
        sj = (mij * hi - a * hj) / w2
        yi = xi - si
        yj = xj - sj
        cs = np.cos(w * s)
        sn = np.sin(w * s) / w
        return si + cs * yi - sn * (mij * yi + a * yj), sj + cs * yj + sn * (a * yi + mij * yj)

    def flow(self, x: np.ndarray, i: int, j: int, s: float) -> np.ndarray:
        """Return ``e^{s X_ij} x`` for a single configuration."""
        x = np.array(x, dtype=float)
        if self.is_diagonal:
            c, sn = math.cos(self.center * s), math.sin(self.center * s)
            xi, xj = x[i], x[j]
            x[i] = c * xi - sn * xj
            x[j] = sn * xi + c * xj
            return x
        mij = self.matrix_entry(i, j)
        gi = float(self.coeffs @ x[self.table[i]])
        gj = float(self.coeffs @ x[self.table[j]])
        hi = gi - self.center * x[i] - mij * x[j]
        hj = gj - mij * x[i] - self.center * x[j]
        x[i], x[j] = self.pair_flow(x[i], x[j], hi, hj, mij, s)
        return x


class Configuration:
    """State ``x`` with a lazily cached energy ``V(x)``."""

    def __init__(self, values, model: LatticeModel):
        values = np.array(values, dtype=float)
        if values.shape != (model.n_sites,):
            raise ValueError(f"expected {model.n_sites} site values, got shape {values.shape}")
        self.values = values
        self.model = model
        self._V: float | None = None

    @property
    def V(self) -> float:
        if self._V is None:
            self._V = float(self.model.potential(self.values))
        return self._V

    def revalidate(self, rtol: float = 1e-12) -> float:
        """Recompute ``V`` and check it against the cache."""
        fresh = float(self.model.potential(self.values))
        if self._V is not None and abs(fresh - self._V) > rtol * max(abs(fresh), 1e-300):
            raise AssertionError(f"cached V={self._V!r} differs from recomputed {fresh!r}")
        self._V = fresh
        return fresh

    def copy(self) -> "Configuration":
        out = Configuration(self.values, self.model)
        out._V = self._V
        return out

    def __repr__(self) -> str:
        return f"Configuration(n={self.values.size}, V={self.V:.6g})"


@dataclass(frozen=True)
class PairField:
    """First-order operator ``X_ij = (Mx)_i d_j - (Mx)_j d_i``."""

    i: int
    j: int
    model: LatticeModel

    def reversed(self) -> "PairField":
        return PairField(self.j, self.i, self.model)

    def apply(self, x: Configuration, f_grad) -> float:
        return field_apply(self, x, f_grad)

    def flow(self, x: Configuration, s: float) -> Configuration:
        return field_flow(self, x, s)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, Configuration) else np.asarray(x, dtype=float)


def grad_V(x: Configuration, i: int) -> float:
    m = x.model
    return float(m.coeffs @ x.values[m.table[i]])


def potential_V(x: Configuration) -> float:
    return x.V


def field_apply(X: PairField, x: Configuration, f_grad) -> float:
    """``X_ij f`` at ``x`` given the partial derivatives of ``f`` at sites ``i`` and ``j``."""
    return grad_V(x, X.i) * f_grad[X.j] - grad_V(x, X.j) * f_grad[X.i]


def field_flow(X: PairField, x: Configuration, s: float) -> Configuration:
    out = Configuration(X.model.flow(x.values, X.i, X.j, s), X.model)
    out._V = x._V
    return out


def drift_A(x: Configuration) -> Configuration:
    return Configuration(x.model.drift(x.values), x.model)


def diffusion_B_apply(x: Configuration, dW) -> np.ndarray:
    dW = np.asarray(dW, dtype=float).reshape(x.model.n_sites, x.model.dim)
    return x.model.diffusion(x.values, dW)
