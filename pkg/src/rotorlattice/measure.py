"""Gaussian invariant measures, exact Wick moments and the associated quadratic forms."""

from __future__ import annotations

import itertools
import math
import re
from collections import defaultdict
from typing import Iterable, Mapping

import numpy as np

from .model import Configuration, LatticeModel

MAX_WICK_DEGREE = 4


class UnsupportedDegreeError(ValueError):
    """Polynomial degree beyond what the Wick engine evaluates."""


Monomial = tuple  # sorted tuple of site ids, () for the constant


class PolynomialObservable:
    """Sparse polynomial in the site variables, kept in canonical form.

    Monomials are sorted tuples of site ids (repeats encode powers); equal
    monomials are merged and zero coefficients dropped.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Monomial, float] | None = None):
        acc: dict[Monomial, float] = defaultdict(float)
        for mono, c in (terms or {}).items():
            acc[tuple(sorted(int(s) for s in mono))] += float(c)
        self.terms = {m: c for m, c in sorted(acc.items(), key=_mono_key) if c != 0.0}

    # constructors ---------------------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "PolynomialObservable":
        return cls({(): c})

    @classmethod
    def var(cls, site: int, power: int = 1, coef: float = 1.0) -> "PolynomialObservable":
        return cls({(site,) * power: coef})

    @classmethod
    def linear(cls, coefs: Mapping[int, float]) -> "PolynomialObservable":
        return cls({(s,): c for s, c in coefs.items()})

    @classmethod
    def sum_of_squares(cls, sites: Iterable[int]) -> "PolynomialObservable":
        return cls({(int(s), int(s)): 1.0 for s in sites})

    @classmethod
    def from_quadratic(cls, Q: np.ndarray, c: float = 0.0, tol: float = 0.0) -> "PolynomialObservable":
        Q = np.asarray(Q, dtype=float)
        terms: dict[Monomial, float] = {(): c}
        rows, cols = np.nonzero(np.abs(np.triu(Q)) > tol)
        for i, j in zip(rows.tolist(), cols.tolist()):
            terms[(i, j)] = Q[i, i] if i == j else 2.0 * Q[i, j]
        return cls(terms)

    @classmethod
    def parse(cls, text: str) -> "PolynomialObservable":
        """Parse sums like ``"2*x0*x1 - x3^2 + 0.5"``; sites are written ``x<id>``."""
        src = text.replace(" ", "")
        if not src:
            raise ValueError("empty polynomial")
        terms: dict[Monomial, float] = defaultdict(float)
        for chunk in re.split(r"(?<![eE^*])(?=[+-])", src):
            if not chunk:
                continue
            coef = 1.0
            if chunk[0] in "+-":
                coef = -1.0 if chunk[0] == "-" else 1.0
                chunk = chunk[1:]
            mono: list[int] = []
            for factor in chunk.split("*"):
                m = re.fullmatch(r"x(\d+)(?:\^(\d+))?", factor)
                if m:
                    mono.extend([int(m.group(1))] * int(m.group(2) or 1))
                    continue
                try:
                    coef *= float(factor)
                except ValueError:
                    raise ValueError(f"cannot parse factor {factor!r} in {text!r}") from None
            terms[tuple(mono)] += coef
        return cls(terms)

    # structure ---------------------------------------------------------------
    @property
    def degree(self) -> int:
        return max((len(m) for m in self.terms), default=0)

    def variables(self) -> set[int]:
        return {s for m in self.terms for s in m}

    def is_zero(self) -> bool:
        return not self.terms

    def constant_term(self) -> float:
        return self.terms.get((), 0.0)

    def derivative(self, site: int) -> "PolynomialObservable":
        out: dict[Monomial, float] = defaultdict(float)
        for mono, c in self.terms.items():
            k = mono.count(site)
            if k:
                rest = list(mono)
                rest.remove(site)
                out[tuple(rest)] += c * k
        return PolynomialObservable(out)

    def gradient(self) -> dict[int, "PolynomialObservable"]:
        return {s: self.derivative(s) for s in sorted(self.variables())}

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on a configuration or a batch ``(..., n_sites)``."""
        x = np.asarray(x.values if isinstance(x, Configuration) else x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for mono, c in self.terms.items():
            term = np.full(x.shape[:-1], c)
            for s in mono:
                term = term * x[..., s]
            out = out + term
        return out

    def compiled(self) -> tuple[np.ndarray, np.ndarray]:
        """``(coefs, idx)`` with ``idx`` of shape ``(n_terms, degree)`` padded by ``-1``."""
        d = max(self.degree, 1)
        idx = np.full((len(self.terms), d), -1, dtype=np.int64)
        for r, mono in enumerate(self.terms):
            idx[r, : len(mono)] = mono
        return np.array(list(self.terms.values())), idx

    # algebra ---------------------------------------------------------------
    def __add__(self, other) -> "PolynomialObservable":
        other = _as_poly(other)
        acc = dict(self.terms)
        for m, c in other.terms.items():
            acc[m] = acc.get(m, 0.0) + c
        return PolynomialObservable(acc)

    __radd__ = __add__

    def __neg__(self) -> "PolynomialObservable":
        return PolynomialObservable({m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "PolynomialObservable":
        return self + (-_as_poly(other))

    def __rsub__(self, other) -> "PolynomialObservable":
        return _as_poly(other) - self

    def __mul__(self, other) -> "PolynomialObservable":
        if isinstance(other, (int, float, np.floating)):
            return PolynomialObservable({m: c * other for m, c in self.terms.items()})
        other = _as_poly(other)
        acc: dict[Monomial, float] = defaultdict(float)
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                acc[tuple(sorted(m1 + m2))] += c1 * c2
        return PolynomialObservable(acc)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return isinstance(other, PolynomialObservable) and self.terms == other.terms

    def __hash__(self) -> int:
        return hash(tuple(self.terms.items()))

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for mono, c in self.terms.items():
            factors = []
            for s, grp in itertools.groupby(mono):
                p = len(list(grp))
                factors.append(f"x{s}" + (f"^{p}" if p > 1 else ""))
            body = "*".join(factors)
            if not body:
                parts.append(repr(c))
            elif c == 1.0:
                parts.append(body)
            elif c == -1.0:
                parts.append("-" + body)
            else:
                parts.append(f"{c!r}*{body}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self) -> str:
        return f"PolynomialObservable({str(self)!r})"


def _mono_key(item):
    return (len(item[0]), item[0])


def _as_poly(p) -> PolynomialObservable:
    if isinstance(p, PolynomialObservable):
        return p
    if isinstance(p, (int, float, np.floating)):
        return PolynomialObservable.constant(float(p))
    raise TypeError(f"cannot combine polynomial with {type(p).__name__}")


# --- symbolic field and generator actions ---------------------------------------


def grad_polynomial(model: LatticeModel, site: int) -> PolynomialObservable:
    """The linear polynomial ``(Mx)_site``."""
    return PolynomialObservable.linear(
        {int(j): float(c) for j, c in zip(model.table[site], model.coeffs)}
    )


def apply_field(model: LatticeModel, i: int, j: int, p: PolynomialObservable) -> PolynomialObservable:
    """Symbolic ``X_ij p``."""
    dj = p.derivative(j)
    di = p.derivative(i)
    out = PolynomialObservable()
    if dj.terms:
        out = out + grad_polynomial(model, i) * dj
    if di.terms:
        out = out - grad_polynomial(model, j) * di
    return out


def edges_touching(model: LatticeModel, sites: Iterable[int]) -> np.ndarray:
    sites = np.fromiter(sites, dtype=np.int64)
    if sites.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    edges = model.lattice.edges
    mask = np.isin(edges[:, 0], sites) | np.isin(edges[:, 1], sites)
    return edges[mask]


def generator_apply(model: LatticeModel, p: PolynomialObservable, beta: float = 0.0) -> PolynomialObservable:
    """``(L - beta D) p`` with ``L = 1/2 sum_edges X_e^2``."""
    out = PolynomialObservable()
    for i, j in edges_touching(model, p.variables()).tolist():
        xp = apply_field(model, i, j, p)
        if xp.terms:
            out = out + 0.5 * apply_field(model, i, j, xp)
    if beta:
        out = out - beta * dilation_apply(p)
    return out


def generator_apply_expanded(model: LatticeModel, p: PolynomialObservable) -> PolynomialObservable:
    """``L p`` from the second-order expansion: diffusion matrix, cross terms and Ito drift."""
    lat = model.lattice
    out = PolynomialObservable()
    grads: dict[int, PolynomialObservable] = {}

    def g(s):
        if s not in grads:
            grads[s] = grad_polynomial(model, s)
        return grads[s]

    for i in sorted(p.variables()):
        di = p.derivative(i)
        dii = di.derivative(i)
        if dii.terms:
            coef = PolynomialObservable()
            for j in lat.neighbor_table[i].tolist():
                coef = coef + g(j) * g(j)
            out = out + 0.5 * coef * dii
        # each unordered edge (i, i + e_k) once, from its base site
        for k in range(lat.dim):
            j = int(lat.neighbor_table[i, 2 * k + 1])
            dij = di.derivative(j)
            if dij.terms:
                out = out - g(i) * g(j) * dij
        drift = _drift_polynomial(model, i)
        out = out + drift * di
    return out


def _drift_polynomial(model: LatticeModel, i: int) -> PolynomialObservable:
    lat = model.lattice
    out = -model.dim * model.center * grad_polynomial(model, i)
    for k in range(lat.dim):
        ck = model.axis_coupling[k]
        if ck:
            for nb in (lat.neighbor_table[i, 2 * k], lat.neighbor_table[i, 2 * k + 1]):
                out = out + 0.5 * ck * grad_polynomial(model, int(nb))
    return out


def dilation_apply(p: PolynomialObservable) -> PolynomialObservable:
    """``D p = sum_k x_k d_k p``: multiplies each monomial by its degree."""
    return PolynomialObservable({m: c * len(m) for m, c in p.terms.items()})


# --- the measure ------------------------------------------------------------------


class GaussianMeasure:
    """Centered Gaussian with covariance ``r G``, ``G = M^{-1}`` the circulant inverse on the torus."""

    def __init__(self, model: LatticeModel, r: float = 1.0):
        if not r > 0:
            raise ValueError(f"temperature r must be positive, got {r}")
        self.model = model
        self.r = float(r)
        self._cov_vec = self.r * model.green_vector
        self._diag_var = self.r / model.center if model.is_diagonal else None
        self._coords = model.lattice.all_coords.tolist()
        self._strides = [model.lattice.side**a for a in range(model.lattice.dim)]

    def cov(self, i: int, j: int) -> float:
        """Scalar ``r G_ij``."""
        if self._diag_var is not None:
            return self._diag_var if i == j else 0.0
        L = self.model.lattice.side
        ci, cj = self._coords[i], self._coords[j]
        idx = sum(((b - a) % L) * s for a, b, s in zip(ci, cj, self._strides))
        return float(self._cov_vec[idx])

    @property
    def lattice(self):
        return self.model.lattice

    def covariance(self, i, j):
        """``r G_ij`` (vectorized)."""
        lat = self.model.lattice
        diff = lat.all_coords[np.asarray(j)] - lat.all_coords[np.asarray(i)]
        return self._cov_vec[lat.index_of(diff)]

    def covariance_matrix(self) -> np.ndarray:
        sites = np.arange(self.model.n_sites)
        return self.covariance(sites[:, None], sites[None, :])

    def dense_covariance(self) -> np.ndarray:
        """``r M^{-1}`` by dense inversion (reference for small lattices)."""
        if self.model.n_sites > 4096:
            raise ValueError("dense covariance is limited to at most 4096 sites")
        return self.r * np.linalg.inv(self.model.matrix())

    def color(self, white: np.ndarray) -> np.ndarray:
        """Map i.i.d. standard normals (batch ``(..., n_sites)``) to samples of the measure."""
        white = np.asarray(white, dtype=float)
        if self.model.is_diagonal:
            return math.sqrt(self.r / self.model.center) * white
        lat = self.model.lattice
        axes = tuple(range(-lat.dim, 0))
        root = np.sqrt(self.r / self.model.symbol())
        grid = np.fft.ifftn(root * np.fft.fftn(lat.as_grid(white), axes=axes), axes=axes).real
        return lat.from_grid(grid)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.model.n_sites,) if size is None else (size, self.model.n_sites)
        return self.color(rng.standard_normal(shape))

    def sample_configuration(self, rng: np.random.Generator) -> Configuration:
        return Configuration(self.sample(rng), self.model)

    def __repr__(self) -> str:
        return f"GaussianMeasure(r={self.r}, {self.model.stencil!r}, {self.model.lattice!r})"


def sample(measure: GaussianMeasure, rng: np.random.Generator) -> Configuration:
    return measure.sample_configuration(rng)


def _pairing_value(measure: GaussianMeasure, mono: Monomial) -> float:
    d = len(mono)
    if d == 0:
        return 1.0
    if d % 2:
        return 0.0
    cov = measure.cov
    if d == 2:
        return cov(mono[0], mono[1])
    a, b, c, e = mono
    return cov(a, b) * cov(c, e) + cov(a, c) * cov(b, e) + cov(a, e) * cov(b, c)


def wick_expect(measure: GaussianMeasure, p: PolynomialObservable) -> float:
    """Exact expectation of a polynomial of degree at most four."""
    if p.degree > MAX_WICK_DEGREE:
        raise UnsupportedDegreeError(f"degree {p.degree} exceeds the Wick engine limit {MAX_WICK_DEGREE}")
    return math.fsum(c * _pairing_value(measure, m) for m, c in p.terms.items())


def _grad_second_moments(measure: GaussianMeasure, f: PolynomialObservable) -> dict[int, float]:
    return {s: wick_expect(measure, d * d) for s, d in f.gradient().items()}


def seminorm_A(measure: GaussianMeasure, f: PolynomialObservable) -> float:
    """``(sum_i E|d_i f|^2)^{1/2}``."""
    return math.sqrt(math.fsum(_grad_second_moments(measure, f).values()))


def seminorm_B(measure: GaussianMeasure, f: PolynomialObservable) -> float:
    """``sum_i (E|d_i f|^2)^{1/2}``."""
    return math.fsum(math.sqrt(v) for v in _grad_second_moments(measure, f).values())


def dirichlet_form(measure: GaussianMeasure, f: PolynomialObservable, g: PolynomialObservable) -> float:
    """``1/4 sum_i sum_{j~i} E[(X_ij f)(X_ij g)]``, i.e. half the sum over unordered edges."""
    model = measure.model
    vals = []
    for i, j in edges_touching(model, f.variables() & _field_support(model, g)).tolist():
        xf = apply_field(model, i, j, f)
        if not xf.terms:
            continue
        xg = apply_field(model, i, j, g)
        if xg.terms:
            vals.append(0.5 * wick_expect(measure, xf * xg))
    return math.fsum(vals)


def _field_support(model: LatticeModel, g: PolynomialObservable) -> set[int]:
    """Sites whose incident edges can act nontrivially on ``g`` (variables and their neighbors)."""
    vs = g.variables()
    out = set(vs)
    for s in vs:
        out.update(model.lattice.neighbor_table[s].tolist())
    return out


def sobolev_inner(measure: GaussianMeasure, f: PolynomialObservable, g: PolynomialObservable) -> float:
    """``E[fg] + sum_ij G_ij E[d_i f d_j g]`` with ``G = M^{-1}`` (no temperature factor)."""
    model = measure.model
    df = f.gradient()
    dg = g.gradient()
    vals = [wick_expect(measure, f * g)]
    for i, pi in df.items():
        for j, pj in dg.items():
            gij = float(model.green(i, j))
            if gij:
                vals.append(gij * wick_expect(measure, pi * pj))
    return math.fsum(vals)


def variance(measure: GaussianMeasure, f: PolynomialObservable) -> float:
    m = wick_expect(measure, f)
    return wick_expect(measure, f * f) - m * m


def energy_polynomial(model: LatticeModel) -> PolynomialObservable:
    """``V`` as a polynomial."""
    terms: dict[Monomial, float] = defaultdict(float)
    for i in range(model.n_sites):
        for j, c in zip(model.table[i].tolist(), model.coeffs.tolist()):
            terms[(i, j)] += 0.5 * c
    return PolynomialObservable(terms)
