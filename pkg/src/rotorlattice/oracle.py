"""Closed-form references: discrete heat kernels, quadratic-form evolution and the constant A."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .lattice import TorusLattice
from .measure import GaussianMeasure, PolynomialObservable
from .model import Configuration, LatticeModel

SERIES_LIMIT = 20.0
DENSE_LIMIT = 1024


class OracleError(ValueError):
    """Invalid oracle request or failed numerical control."""


# --- modified Bessel functions ---------------------------------------------------


def scaled_bessel_i(kmax: int, x: float) -> np.ndarray:
    """``exp(-x) I_k(x)`` for ``k = 0..kmax``.

    Power series for ``x <= 20``; Miller backward recurrence normalized by
    ``exp(x) = I_0(x) + 2 sum_k I_k(x)`` beyond.
    """
    x = float(x)
    if x < 0:
        raise OracleError(f"argument must be nonnegative, got {x}")
    kmax = int(kmax)
    out = np.zeros(kmax + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    if x <= SERIES_LIMIT:
        h = 0.5 * x
        h2 = h * h
        for k in range(kmax + 1):
            log0 = k * math.log(h) - math.lgamma(k + 1) - x
            if log0 < -745.0:
                break
            term = math.exp(log0)
            total = term
            m = 0
            while term > 1e-17 * total:
                m += 1
                term *= h2 / (m * (m + k))
                total += term
            out[k] = total
        return out
    start = kmax + int(10.0 * math.sqrt(x)) + 30
    start += start % 2
    y = np.zeros(start + 2)
    y[start] = 1e-30
    for n in range(start, 0, -1):
        y[n - 1] = (2.0 * n / x) * y[n] + y[n + 1]
        if y[n - 1] > 1e250:
            y[n - 1:] *= 1e-250
    norm = y[0] + 2.0 * y[1:].sum()
    return y[: kmax + 1] / norm


def scaled_bessel_i0(x: float) -> float:
    return float(scaled_bessel_i(0, x)[0])


# --- heat kernels ---------------------------------------------------------------------


def _torus_kernel_1d(t: float, side: int) -> np.ndarray:
    """``(1/L) sum_m exp(-2t(1 - cos(2 pi m / L))) cos(2 pi m k / L)`` for ``k = 0..L-1``."""
    if t == 0:
        return np.eye(1, side)[0]
    m = np.arange(side)
    ang = 2.0 * np.pi * m / side
    weights = np.exp(-2.0 * t * (1.0 - np.cos(ang)))
    phase = np.cos(np.outer(m, ang))
    return phase @ weights / side


@dataclass(frozen=True)
class HeatKernel:
    """Kernel of ``exp(t D Lap)`` on ``Z^N`` or on the torus of side ``side``."""

    dim: int
    t: float
    diffusivity: float = 1.0
    form: str = "infinite"
    side: int | None = None

    def __post_init__(self):
        if self.t < 0:
            raise OracleError(f"heat kernel time must be nonnegative, got {self.t}")
        if self.form not in ("infinite", "torus"):
            raise OracleError(f"unknown heat kernel form {self.form!r}")
        if self.form == "torus" and self.side is None:
            raise OracleError("torus heat kernel needs a side length")

    @property
    def tau(self) -> float:
        return self.diffusivity * self.t

    def value(self, k) -> float:
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if k.size != self.dim:
            raise OracleError(f"offset must have {self.dim} components")
        if self.form == "infinite":
            kabs = np.abs(k)
            ive = scaled_bessel_i(int(kabs.max()), 2.0 * self.tau)
            return float(np.prod(ive[kabs]))
        q = _torus_kernel_1d(self.tau, self.side)
        return float(np.prod(q[np.mod(k, self.side)]))

    def field(self, lattice: TorusLattice) -> np.ndarray:
        """Kernel at every site offset of ``lattice`` (torus form uses ``lattice.side``)."""
        coords = lattice.all_coords
        if self.form == "torus":
            q = _torus_kernel_1d(self.tau, lattice.side)
            return np.prod(q[coords], axis=1)
        signed = np.where(coords > lattice.side // 2, coords - lattice.side, coords)
        ive = scaled_bessel_i(lattice.side, 2.0 * self.tau)
        return np.prod(ive[np.abs(signed)], axis=1)


def heat_kernel(form: str, t: float, k, dim: int | None = None, diffusivity: float = 1.0,
                side: int | None = None) -> float:
    """Heat kernel value at offset ``k``; the infinite form is a product of scaled Bessel functions."""
    k = np.atleast_1d(k)
    return HeatKernel(dim or k.size, t, diffusivity, form, side).value(k)


def second_moment_field(x0, t: float, b: float, beta: float = 0.0, lattice: TorusLattice | None = None) -> np.ndarray:
    """``E_x0[Y_k(t)^2]`` for every site ``k`` under ``M = b Id`` (torus heat kernel)."""
    if isinstance(x0, Configuration):
        if not x0.model.is_diagonal:
            raise OracleError("second_moment_field only holds for diagonal M = b Id")
        if not math.isclose(x0.model.center, b, rel_tol=1e-12):
            raise OracleError(f"b={b} does not match the configuration stencil b={x0.model.center}")
        lattice = x0.model.lattice
        x0 = x0.values
    if lattice is None:
        raise OracleError("a lattice is needed when x0 is a plain array")
    if t < 0:
        raise OracleError(f"t must be nonnegative, got {t}")
    w0 = np.asarray(x0, dtype=float) ** 2
    if t == 0:
        return w0
    kern = HeatKernel(lattice.dim, t, b * b, "torus", lattice.side).field(lattice)
    conv = np.fft.ifftn(np.fft.fftn(lattice.as_grid(kern)) * np.fft.fftn(lattice.as_grid(w0))).real
    return math.exp(-2.0 * beta * t) * lattice.from_grid(conv)


# --- quadratic observables ---------------------------------------------------------------


def _is_sparse(a) -> bool:
    return sparse.issparse(a)


def _trace_prod(a, b) -> float:
    """``tr(a b)`` for dense or sparse operands."""
    if _is_sparse(a):
        return float(a.multiply(b.T).sum()) if _is_sparse(b) else float(a.multiply(np.asarray(b).T).sum())
    if _is_sparse(b):
        return float(b.multiply(np.asarray(a).T).sum())
    return float(np.einsum("ij,ji->", a, b))


def _diag(a) -> np.ndarray:
    return np.asarray(a.diagonal()).ravel() if _is_sparse(a) else np.diag(a).copy()


class QuadraticObservable:
    """``f(x) = x^T Q x + c`` with symmetric ``Q`` (dense array or scipy sparse matrix)."""

    def __init__(self, Q, c: float = 0.0):
        if _is_sparse(Q):
            Q = sparse.csr_matrix(Q, dtype=float)
            asym = abs(Q - Q.T).max() if Q.nnz else 0.0
        else:
            Q = np.array(Q, dtype=float)
            asym = np.abs(Q - Q.T).max() if Q.size else 0.0
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise OracleError(f"Q must be square, got shape {Q.shape}")
        if asym > 1e-12 * max(1.0, float(abs(Q).max())):
            raise OracleError("Q must be symmetric")
        self.Q = Q
        self.c = float(c)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def from_polynomial(cls, p: PolynomialObservable, n: int) -> "QuadraticObservable":
        if p.degree > 2 or any(len(m) == 1 for m in p.terms):
            raise OracleError("only homogeneous quadratic polynomials plus a constant are supported")
        Q = sparse.lil_matrix((n, n))
        for mono, coef in p.terms.items():
            if len(mono) == 2:
                i, j = mono
                if i == j:
                    Q[i, i] += coef
                else:
                    Q[i, j] += 0.5 * coef
                    Q[j, i] += 0.5 * coef
        return cls(Q.tocsr(), p.constant_term())

    def to_polynomial(self, tol: float = 0.0) -> PolynomialObservable:
        Q = self.Q.toarray() if _is_sparse(self.Q) else self.Q
        return PolynomialObservable.from_quadratic(Q, self.c, tol)

    def dense(self) -> np.ndarray:
        return self.Q.toarray() if _is_sparse(self.Q) else self.Q

    def is_diagonal(self) -> bool:
        if _is_sparse(self.Q):
            coo = self.Q.tocoo()
            return bool(np.all(coo.row[coo.data != 0] == coo.col[coo.data != 0]))
        return bool(np.count_nonzero(self.Q - np.diag(np.diag(self.Q))) == 0)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x.values if isinstance(x, Configuration) else x, dtype=float)
        Qx = (self.Q @ x.T).T if _is_sparse(self.Q) else x @ self.Q
        return np.sum(Qx * x, axis=-1) + self.c

    # Gaussian moments with covariance C ------------------------------------
    def mean(self, measure: GaussianMeasure) -> float:
        return _trace_prod(self.Q, covariance_operator(measure)) + self.c

    def variance(self, measure: GaussianMeasure) -> float:
        C = covariance_operator(measure)
        QC = self.Q @ C
        return 2.0 * _trace_prod(QC, QC)

    def grad_second_moments(self, measure: GaussianMeasure) -> np.ndarray:
        """``E|d_i f|^2 = 4 (Q C Q)_ii`` for every site."""
        C = covariance_operator(measure)
        QCQ = self.Q @ C @ self.Q
        return 4.0 * _diag(QCQ)

    def seminorm_A(self, measure: GaussianMeasure) -> float:
        return math.sqrt(float(self.grad_second_moments(measure).sum()))

    def seminorm_B(self, measure: GaussianMeasure) -> float:
        return float(np.sqrt(np.maximum(self.grad_second_moments(measure), 0.0)).sum())

    def expect_product(self, other: "QuadraticObservable", measure: GaussianMeasure) -> float:
        """``E[f g]`` by Wick's formula for two quadratic forms."""
        C = covariance_operator(measure)
        QC, PC = self.Q @ C, other.Q @ C
        tq, tp = _trace_prod(self.Q, C), _trace_prod(other.Q, C)
        return tq * tp + 2.0 * _trace_prod(QC, PC) + self.c * tp + other.c * tq + self.c * other.c

    def dirichlet(self, measure: GaussianMeasure) -> float:
        """``-E[f L f]``."""
        Lf = QuadraticObservable(generator_action(measure.model, self.Q), 0.0)
        return -self.expect_product(Lf, measure)

    def nash_denominator_sum(self, measure: GaussianMeasure) -> float:
        """``sum_i E[d_i f d_i(-L f)] = 4 tr(Q C P)`` with ``P`` the matrix of ``-L f``."""
        C = covariance_operator(measure)
        P = -generator_action(measure.model, self.Q)
        return 4.0 * _trace_prod(self.Q @ C, P)

    def __repr__(self) -> str:
        kind = "sparse" if _is_sparse(self.Q) else "dense"
        return f"QuadraticObservable(n={self.n}, {kind}, c={self.c})"


def covariance_operator(measure: GaussianMeasure):
    """``r G`` as a sparse identity multiple (diagonal ``M``) or a dense matrix."""
    n = measure.model.n_sites
    if measure.model.is_diagonal:
        return sparse.identity(n, format="csr") * (measure.r / measure.model.center)
    return measure.covariance_matrix()


def _adjacency(model: LatticeModel) -> sparse.csr_matrix:
    e = model.lattice.edges
    n = model.n_sites
    data = np.ones(2 * len(e))
    return sparse.csr_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))


class _GeneratorMatrix:
    """Cached operators for ``Q -> P`` with ``(L - beta D)(x^T Q x) = x^T P x``."""

    def __init__(self, model: LatticeModel, beta: float = 0.0, dense: bool | None = None):
        self.adj = _adjacency(model)
        self.A = model.drift_matrix
        self.M = model.sparse_matrix
        self.beta = float(beta)
        self.dense = model.n_sites <= DENSE_LIMIT if dense is None else dense
        if self.dense:
            self.adj_d = self.adj.toarray()
            self.At_d = self.A.T.toarray()
            self.M_d = self.M.toarray()

    def __call__(self, Q):
        if self.dense and not _is_sparse(Q):
            W = np.diag(self.adj_d @ np.diag(Q)) - self.adj_d * Q
            QA = (self.At_d @ Q).T
            out = QA + QA.T + self.M_d @ W @ self.M_d
        else:
            W = sparse.diags(self.adj @ _diag(Q)) - self.adj.multiply(Q)
            MWM = self.M @ sparse.csr_matrix(W) @ self.M
            if _is_sparse(Q):
                QA = Q @ self.A
                out = QA + QA.T + MWM
            else:
                QA = np.asarray(self.A.T @ Q).T
                out = QA + QA.T + MWM.toarray()
        if self.beta:
            out = out - 2.0 * self.beta * Q
        return out


def generator_action(model: LatticeModel, Q, beta: float = 0.0):
    """Matrix ``P`` with ``(L - beta D)(x^T Q x) = x^T P x``.

    ``L = 1/2 sum_e X_e^2`` acts through ``X_e x = K_e x``; summing the second-order
    and drift parts gives ``P = Q A + A^T Q + M W(Q) M - 2 beta Q`` where ``A`` is the
    Ito drift matrix and ``W(Q) = diag(Adj diag Q) - Q o Adj``.
    """
    return _GeneratorMatrix(model, beta)(Q)


def _rk4_run(rhs, y0, times, h):
    """Classical RK4 with step ``h`` (shortened to land on each requested time)."""
    out = []
    y = y0
    t = 0.0
    for target in times:
        while t < target - 1e-15:
            step = min(h, target - t)
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * step * k1)
            k3 = rhs(y + 0.5 * step * k2)
            k4 = rhs(y + step * k3)
            y = y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += step
        out.append(y)
    return out


def _max_abs(a) -> float:
    if _is_sparse(a):
        return float(abs(a).max()) if a.nnz else 0.0
    return float(np.abs(a).max()) if np.size(a) else 0.0


def quadratic_curve(f: QuadraticObservable, times: Sequence[float], model: LatticeModel, beta: float = 0.0,
                    tol: float = 1e-10, h0: float | None = None, max_halvings: int = 12) -> list[QuadraticObservable]:
    """``P_t f`` at each requested time for ``L - beta D``, by RK4 with halved-step acceptance.

    A run with step ``h`` is accepted when every recorded matrix lies within
    ``tol * max|Q(0)|`` of the run with step ``h / 2``.  Under diagonal ``M`` the diagonal of
    ``Q`` evolves on its own as a vector and each off-diagonal entry decays exponentially.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise OracleError("times must be nonnegative and nondecreasing")
    scale = max(_max_abs(f.Q), 1e-300)
    lam = float(np.abs(model.symbol()).max())
    rho = 4.0 * model.dim * lam * lam + 2.0 * beta
    h = h0 if h0 is not None else min(0.25, 0.5 / rho)

    off = None
    if model.is_diagonal:
        adj = _adjacency(model)
        b2 = model.center**2
        twoN = 2 * model.dim

        def rhs(d):
            return b2 * (adj @ d - twoN * d) - 2.0 * beta * d

        y0 = _diag(f.Q)
        if not f.is_diagonal():
            # off-diagonal entries decouple: Q_ij' = -(b^2 (2N + Adj_ij) + 2 beta) Q_ij
            off = sparse.coo_matrix(f.Q - sparse.diags(y0) if _is_sparse(f.Q) else f.Q - np.diag(y0))
            keep = (off.data != 0) & (off.row != off.col)
            off = sparse.coo_matrix((off.data[keep], (off.row[keep], off.col[keep])), shape=off.shape)
            rate = b2 * (twoN + np.asarray(adj[off.row, off.col]).ravel()) + 2.0 * beta
        wrap_diag = lambda d: sparse.diags(d, format="csr")  # noqa: E731
        if off is None:
            wrap = lambda d, t: QuadraticObservable(wrap_diag(d), f.c)  # noqa: E731
        else:
            def wrap(d, t):
                od = sparse.coo_matrix((off.data * np.exp(-rate * t), (off.row, off.col)), shape=off.shape)
                return QuadraticObservable((wrap_diag(d) + od).tocsr(), f.c)
    else:
        y0 = f.dense()
        rhs = _GeneratorMatrix(model, beta)

        wrap = lambda Q, t: QuadraticObservable(0.5 * (Q + Q.T), f.c)  # noqa: E731

    coarse = _rk4_run(rhs, y0, times, h)
    for _ in range(max_halvings):
        fine = _rk4_run(rhs, y0, times, h / 2)
        err = max((float(np.abs(a - b).max()) for a, b in zip(coarse, fine)), default=0.0)
        if err <= tol * scale:
            return [wrap(q, t) for q, t in zip(fine, times)]
        h /= 2
        coarse = fine
    raise OracleError(f"RK4 step control failed: achieved {err / scale:.3e} relative, wanted {tol:.1e}")


def quadratic_evolve(f: QuadraticObservable, t: float, model: LatticeModel, beta: float = 0.0,
                     tol: float = 1e-10) -> QuadraticObservable:
    """``P_t f`` for a quadratic ``f`` under ``L - beta D``."""
    return quadratic_curve(f, [t], model, beta, tol)[0]


def variance_curve(f: QuadraticObservable, times: Sequence[float], measure: GaussianMeasure,
                   beta: float = 0.0) -> np.ndarray:
    """``Var_mu(P_t f)`` along ``times``."""
    evolved = quadratic_curve(f, times, measure.model, beta)
    return np.array([g.variance(measure) for g in evolved])


# --- the gradient-bound constant ------------------------------------------------------------


def _a_integrand(t: float) -> float:
    return math.sqrt(t) * scaled_bessel_i0(2.0 * t)


def constant_A(b: float = 1.0, tol: float = 1e-12) -> float:
    """``(1/b) sup_t sqrt(t) exp(-2t) I_0(2t)`` by iterated grid refinement.

    The supremum is attained at finite ``t`` (near 0.395), above the large-``t``
    limit ``1 / (2 sqrt(pi))`` returned by :func:`constant_A_limit`.
    """
    if not b > 0:
        raise OracleError(f"b must be positive, got {b}")
    grid = np.logspace(-4, 4, 801)
    best = -1.0
    for _ in range(60):
        vals = np.array([_a_integrand(t) for t in grid])
        k = int(np.argmax(vals))
        if abs(vals[k] - best) <= tol:
            best = max(best, float(vals[k]))
            break
        best = float(vals[k])
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid.size - 1)]
        grid = np.linspace(lo, hi, 101)
    return best / b


def constant_A_limit(b: float = 1.0) -> float:
    """``lim_{t -> inf} (1/b) sqrt(t) exp(-2t) I_0(2t) = 1 / (2 b sqrt(pi))``."""
    return 1.0 / (2.0 * b * math.sqrt(math.pi))


@dataclass
class GradientBoundPoint:
    t: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def gradient_bound_check(f: QuadraticObservable, t_grid: Sequence[float], measure: GaussianMeasure,
                         A: float | None = None) -> list[GradientBoundPoint]:
    """``max_i E|d_i P_t f|^2`` against ``A^N t^{-N/2} A_r(f)^2`` along ``t_grid``."""
    model = measure.model
    if not model.is_diagonal:
        raise OracleError("the gradient bound check needs diagonal M")
    A = constant_A(model.center) if A is None else A
    N = model.dim
    a2 = f.seminorm_A(measure) ** 2
    t_grid = np.asarray(t_grid, dtype=float)
    order = np.argsort(t_grid)
    evolved = quadratic_curve(f, t_grid[order], model)
    out: list[GradientBoundPoint] = [None] * len(t_grid)  # type: ignore[list-item]
    for pos, g in zip(order, evolved):
        t = float(t_grid[pos])
        lhs = float(g.grad_second_moments(measure).max())
        rhs = math.inf if t == 0 else A**N * t ** (-N / 2) * a2
        out[pos] = GradientBoundPoint(t, lhs, rhs)
    return out
