"""Fits, statistical tests and exact inequality audits built on the simulator and the oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .integrators import IntegratorSpec, epoch_steps, run_paths
from .measure import GaussianMeasure, PolynomialObservable
from .oracle import QuadraticObservable, _max_abs, quadratic_curve

CLASSES = ("polynomial", "crossover", "exponential")
SHARE_MARGIN = 0.05


class AnalysisError(ValueError):
    """Invalid input to a fit or check."""


# --- fits ------------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    """Least-squares line through ``(log t, log v)`` (power law) or ``(t, log v)`` (exponential)."""

    exponent: float
    intercept: float
    stderr: float
    window: tuple[float, float]
    r_squared: float
    n_points: int
    kind: str = "power"

    @property
    def rate(self) -> float:
        """Decay rate ``-exponent``; meaningful for exponential fits."""
        return -self.exponent

    def as_dict(self) -> dict:
        return {"kind": self.kind, "exponent": self.exponent, "intercept": self.intercept,
                "stderr": self.stderr, "window": list(self.window), "r_squared": self.r_squared,
                "n_points": self.n_points}


def _window_select(t, values, window):
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise AnalysisError("times and values must be 1-d arrays of equal length")
    lo, hi = (t.min(), t.max()) if window is None else window
    if not lo <= hi:
        raise AnalysisError(f"empty fit window {window}")
    keep = (t >= lo) & (t <= hi)
    if keep.sum() < 5:
        raise AnalysisError(f"need at least 5 points in window [{lo}, {hi}], got {int(keep.sum())}")
    bad = keep & ~(v > 0)
    if bad.any():
        raise AnalysisError(f"nonpositive value {v[bad][0]} at t={t[bad][0]}")
    return t[keep], v[keep], (float(lo), float(hi))


def _line_fit(x, y, window, n, kind) -> FitResult:
    res = stats.linregress(x, y)
    r2 = min(max(float(res.rvalue) ** 2, 0.0), 1.0)
    if not np.isfinite(r2):
        r2 = 1.0
    return FitResult(float(res.slope), float(res.intercept), float(res.stderr), window, r2, n, kind)


def fit_power_law(t, values, window=None) -> FitResult:
    """Fit ``v = c t^p`` on the window; ``exponent`` is ``p``."""
    t, v, window = _window_select(t, values, window)
    if np.any(t <= 0):
        raise AnalysisError("power-law fits need positive times")
    return _line_fit(np.log(t), np.log(v), window, t.size, "power")


def fit_exponential(t, values, window=None) -> FitResult:
    """Fit ``v = c exp(-k t)``; ``exponent`` is ``-k``."""
    t, v, window = _window_select(t, values, window)
    return _line_fit(t, np.log(v), window, t.size, "exponential")


def fit_window(L: int, b: float = 1.0, t_min: float = 1.0) -> tuple[float, float]:
    """Honest fit window ``[1, (L/6)^2 / b^2]``: past the pre-asymptotic regime, before torus wrap."""
    return (t_min, (L / 6.0) ** 2 / b**2)


# --- reports ----------------------------------------------------------------------------


def _fmt(x) -> str:
    """JSON text with floats at 17 significant digits."""
    if isinstance(x, bool) or x is None:
        return "null" if x is None else ("true" if x else "false")
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    if isinstance(x, str):
        import json

        return json.dumps(x)
    if isinstance(x, dict):
        return "{" + ", ".join(f"{_fmt(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in (x.tolist() if isinstance(x, np.ndarray) else x)) + "]"
    if hasattr(x, "as_dict"):
        return _fmt(x.as_dict())
    raise TypeError(f"cannot serialize {type(x).__name__}")


def to_json(obj) -> str:
    return _fmt(obj)


@dataclass
class CheckReport:
    name: str
    claim: str
    passed: bool | None
    measured: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int | None = None
    config_hash: str | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "report" if self.passed is None else ("pass" if self.passed else "fail")

    def as_dict(self) -> dict:
        return {"name": self.name, "claim": self.claim, "status": self.status, "measured": self.measured,
                "tolerances": self.tolerances, "seed": self.seed, "config_hash": self.config_hash,
                "flags": self.flags}

    def to_json(self) -> str:
        return _fmt(self.as_dict())


def _as_quadratic(f, n: int) -> QuadraticObservable:
    if isinstance(f, QuadraticObservable):
        return f
    if isinstance(f, str):
        f = PolynomialObservable.parse(f)
    return QuadraticObservable.from_polynomial(f, n)


def _as_poly(f) -> PolynomialObservable:
    return PolynomialObservable.parse(f) if isinstance(f, str) else f


# --- detailed balance ----------------------------------------------------------------------


@dataclass
class BalanceResult:
    lhs: float
    rhs: float
    diff: float
    stderr: float
    z: float


def _paired_z(d: np.ndarray) -> tuple[float, float, float]:
    n = d.size
    mean = float(d.mean())
    se = float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    if se == 0.0 or not np.isfinite(se):
        z = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    else:
        z = mean / se
    return mean, se, z


def balance_battery(pairs: Sequence[tuple], times: Sequence[float], measure: GaussianMeasure, n_traj: int,
                    seed: int, spec: IntegratorSpec, backend: str | None = None,
                    threads: int | None = None) -> dict[float, list[BalanceResult]]:
    """Paired detailed-balance statistics for many ``(f, g)`` pairs on one stationary ensemble.

    For each trajectory started from the measure the difference
    ``f(Y_0) g(Y_t) - g(Y_0) f(Y_t)`` has mean zero exactly when the dynamics is reversible.
    """
    model = measure.model
    polys = []
    for f, g in pairs:
        polys.extend([_as_poly(f), _as_poly(g)])
    times = [float(t) for t in times]
    steps = epoch_steps(max(times), spec.dt, [0.0] + times)
    chunks = run_paths(model, measure, n_traj, spec, steps, polys, seed, backend, threads,
                       reducer=lambda _, v: v[:, :, :-1])
    vals = np.concatenate(chunks)  # (n, epochs, 2 * pairs)
    out = {}
    for e, t in enumerate(times, start=1):
        res = []
        for p in range(len(pairs)):
            f0, g0 = vals[:, 0, 2 * p], vals[:, 0, 2 * p + 1]
            ft, gt = vals[:, e, 2 * p], vals[:, e, 2 * p + 1]
            a = f0 * gt
            b = g0 * ft
            diff, se, z = _paired_z(a - b)
            res.append(BalanceResult(float(a.mean()), float(b.mean()), diff, se, z))
        out[t] = res
    return out


def detailed_balance_test(f, g, t: float, n_traj: int, seed: int, measure: GaussianMeasure,
                          spec: IntegratorSpec | None = None, backend: str | None = None,
                          threads: int | None = None, config_hash: str | None = None) -> CheckReport:
    """z-score of ``E[f P_t g] - E[g P_t f]`` from one stationary ensemble; pass iff ``|z| <= 3``."""
    spec = spec or IntegratorSpec("split_exact", 0.05, "strang")
    for p in (_as_poly(f), _as_poly(g)):
        if p.degree > 2:
            raise AnalysisError("detailed balance test takes polynomials of degree at most 2")
    if t == 0:
        vals = np.concatenate(run_paths(measure.model, measure, n_traj, spec, np.zeros(1, dtype=np.int64),
                                        [_as_poly(f), _as_poly(g)], seed, backend, threads,
                                        reducer=lambda _, v: v[:, 0, :-1]))
        a = b = vals[:, 0] * vals[:, 1]
        diff, se, z = _paired_z(a - b)
        r = BalanceResult(float(a.mean()), float(b.mean()), diff, se, z)
    else:
        r = balance_battery([(f, g)], [t], measure, n_traj, seed, spec, backend, threads)[float(t)][0]
    return CheckReport("detailed_balance", "E[f P_t g] = E[g P_t f] under the Gaussian measure",
                       abs(r.z) <= 3.0,
                       {"f": str(f), "g": str(g), "t": float(t), "n_traj": int(n_traj), "E_f_Ptg": r.lhs,
                        "E_g_Ptf": r.rhs, "diff": r.diff, "stderr": r.stderr, "z": r.z},
                       {"abs_z": 3.0}, int(seed), config_hash)


# --- exact audits ------------------------------------------------------------------------------


def box_observable(measure: GaussianMeasure, ell: int, origin=None) -> QuadraticObservable:
    """``f = sum_{i in box} x_i^2`` for the ``ell^N`` box."""
    from scipy import sparse

    lat = measure.model.lattice
    if 2 * ell > lat.side:
        raise AnalysisError(f"box side {ell} exceeds half the torus side {lat.side}")
    sites = lat.box(ell, origin)
    d = np.zeros(lat.n_sites)
    d[sites] = 1.0
    return QuadraticObservable(sparse.diags(d, format="csr"))


def no_gap_ratio(ell: int, measure: GaussianMeasure) -> float:
    """Exact ``E(f, f) / Var(f)`` for the box sum of squares."""
    f = box_observable(measure, ell)
    return f.dirichlet(measure) / f.variance(measure)


def no_gap_scan(ells: Iterable[int], measure: GaussianMeasure) -> tuple[np.ndarray, FitResult]:
    ells = np.asarray(list(ells), dtype=float)
    ratios = np.array([no_gap_ratio(int(e), measure) for e in ells])
    return ratios, _line_fit(np.log(ells), np.log(ratios), (float(ells.min()), float(ells.max())),
                             ells.size, "power")


@dataclass
class NashTerm:
    label: str
    A: float
    B: float
    denominator: float
    ratio: float


def nash_check(family, measure: GaussianMeasure) -> tuple[list[NashTerm], float]:
    """``A(f)^{2+4/N} / (B(f)^{4/N} sum_i E[d_i f d_i(-L f)])`` for each member; returns terms and the max."""
    n = measure.model.n_sites
    N = measure.model.dim
    out = []
    for item in family:
        label, f = item if isinstance(item, tuple) else (str(item), item)
        q = _as_quadratic(f, n)
        A = q.seminorm_A(measure)
        B = q.seminorm_B(measure)
        den = q.nash_denominator_sum(measure)
        scale = A * A * max(1.0, float(np.abs(measure.model.coeffs).sum())) ** 2
        if den <= 1e-12 * max(scale, 1e-300):
            raise AnalysisError(f"{label}: L f vanishes (f is invariant, e.g. V), so the ratio is undefined")
        out.append(NashTerm(label, A, B, den, A ** (2 + 4 / N) / (B ** (4 / N) * den)))
    return out, max(t.ratio for t in out)


@dataclass
class LiggettPoint:
    t: float
    lhs: float
    rhs_core: float
    ratio: float


def liggett_check(f, t_grid: Sequence[float], measure: GaussianMeasure) -> tuple[list[LiggettPoint], float | None, list[str]]:
    """``Var(P_t f)`` against ``E(P_t f)^{N/(N+4)} (A B)^{4/(N+4)}`` along ``t_grid``.

    Returns the points, the empirical constant (max ratio) and flags; constant
    observables are flagged degenerate and yield no constant.
    """
    model = measure.model
    if not model.is_diagonal:
        raise AnalysisError("liggett_check needs diagonal M")
    N = model.dim
    q = _as_quadratic(f, model.n_sites)
    if _max_abs(q.Q) == 0.0:
        return [], None, ["degenerate: f is constant, both sides vanish"]
    t_grid = np.asarray(t_grid, dtype=float)
    order = np.argsort(t_grid)
    evolved = quadratic_curve(q, t_grid[order], model)
    pts: list[LiggettPoint] = [None] * len(t_grid)  # type: ignore[list-item]
    for pos, g in zip(order, evolved):
        lhs = g.variance(measure)
        core = g.dirichlet(measure) ** (N / (N + 4)) * (g.seminorm_A(measure) * g.seminorm_B(measure)) ** (4 / (N + 4))
        pts[pos] = LiggettPoint(float(t_grid[pos]), lhs, core, lhs / core)
    return pts, max(p.ratio for p in pts), []


# --- inverse-temperature scan -----------------------------------------------------------------------


@dataclass
class PhasePoint:
    beta: float
    classification: str
    power: FitResult
    exponential: FitResult
    power_share: float
    exp_share: float
    joint_exponent: float
    joint_rate: float


def classify_decay(t, v) -> tuple[str, float, float, float, float]:
    """Split the log-decrement over the window between a power and an exponential factor.

    Fits ``log v = a + p log t - k t`` and attributes ``|p| log(t1/t0)`` and
    ``|k| (t1 - t0)`` of the total decrement to each factor.  A factor carrying at most
    ``SHARE_MARGIN`` of the total is negligible; if neither is, the point is a crossover.
    """
    t = np.asarray(t, dtype=float)
    y = np.log(np.asarray(v, dtype=float))
    design = np.column_stack([np.ones_like(t), np.log(t), -t])
    (a, p, k), *_ = np.linalg.lstsq(design, y, rcond=None)
    d_pow = abs(p) * math.log(t.max() / t.min())
    d_exp = abs(k) * (t.max() - t.min())
    total = d_pow + d_exp
    pow_share = d_pow / total if total > 0 else 0.0
    exp_share = d_exp / total if total > 0 else 0.0
    if exp_share <= SHARE_MARGIN:
        label = "polynomial"
    elif pow_share <= SHARE_MARGIN:
        label = "exponential"
    else:
        label = "crossover"
    return label, float(pow_share), float(exp_share), float(p), float(k)


def phase_transition_scan(beta_list: Sequence[float], T: float, measure: GaussianMeasure, f=None,
                          n_points: int = 61) -> list[PhasePoint]:
    """Classify the exact decay of ``Var(P_t^beta f)`` on ``[T/4, T]`` for each ``beta``."""
    model = measure.model
    if not model.is_diagonal:
        raise AnalysisError("phase_transition_scan needs diagonal M")
    q = _as_quadratic(f if f is not None else PolynomialObservable.var(0, 2), model.n_sites)
    t = np.linspace(T / 4.0, T, n_points)
    out = []
    for beta in beta_list:
        curve = np.array([g.variance(measure) for g in quadratic_curve(q, t, model, beta)])
        label, ps, es, p, k = classify_decay(t, curve)
        out.append(PhasePoint(float(beta), label, fit_power_law(t, curve), fit_exponential(t, curve),
                              ps, es, p, k))
    return out


def is_monotone(points: Sequence[PhasePoint]) -> bool:
    ranks = [CLASSES.index(p.classification) for p in sorted(points, key=lambda p: p.beta)]
    return all(a <= b for a, b in zip(ranks, ranks[1:]))


def bracket_beta_c(points: Sequence[PhasePoint]) -> tuple[float | None, float | None]:
    """Largest ``beta`` classified polynomial and smallest classified exponential."""
    poly = [p.beta for p in points if p.classification == "polynomial"]
    expo = [p.beta for p in points if p.classification == "exponential"]
    return (max(poly) if poly else None, min(expo) if expo else None)


# --- additive functionals ----------------------------------------------------------------------------


@dataclass
class CLTStats:
    T: float
    var: float
    var_stderr: float
    skewness: float
    skew_stderr: float
    excess_kurtosis: float
    kurt_stderr: float


@dataclass
class CLTResult:
    stats: list[CLTStats]
    flags: list[str]
    diffs: list[tuple[float, float, float]]  # (T, var_T - var_T0, paired stderr)
    samples: dict[float, np.ndarray] | None = None


def _moment_stats(T: float, y: np.ndarray) -> CLTStats:
    n = y.size
    m = y.mean()
    c = y - m
    var = float(c @ c / (n - 1))
    if var == 0.0:
        return CLTStats(T, 0.0, 0.0, math.nan, math.nan, math.nan, math.nan)
    m4 = float(np.mean(c**4))
    skew = float(stats.skew(y, bias=False))
    kurt = float(stats.kurtosis(y, fisher=True, bias=False))
    se_skew = math.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3)))
    se_kurt = 2.0 * se_skew * math.sqrt((n * n - 1) / ((n - 3) * (n + 5)))
    var_se = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
    return CLTStats(T, var, var_se, skew, se_skew, kurt, se_kurt)


def clt_stats(F, T_list: Sequence[float], n_traj: int, seed: int, measure: GaussianMeasure,
              spec: IntegratorSpec, sample_dt: float | None = None, backend: str | None = None,
              threads: int | None = None, keep_samples: bool = False) -> CLTResult:
    """Statistics of ``S_T / sqrt(T)`` with ``S_T`` the trapezoidal time integral of ``F``."""
    F = _as_poly(F)
    if F.degree > 2:
        raise AnalysisError("clt_stats takes F of degree at most 2")
    T_list = sorted(float(T) for T in T_list)
    if F.is_zero():
        return CLTResult([CLTStats(T, 0.0, 0.0, math.nan, math.nan, math.nan, math.nan) for T in T_list],
                         ["degenerate: F is identically zero"], [])
    h = sample_dt or spec.dt
    steps = epoch_steps(T_list[-1], spec.dt, np.arange(0, round(T_list[-1] / h) + 1) * h)
    times = steps * spec.dt
    ends = [int(np.argmin(np.abs(times - T))) for T in T_list]

    def reduce(_, v):
        vals = v[:, :, 0]
        cum = np.concatenate([np.zeros((vals.shape[0], 1)),
                              np.cumsum(0.5 * (vals[:, 1:] + vals[:, :-1]) * np.diff(times), axis=1)], axis=1)
        return cum[:, ends]

    S = np.concatenate(run_paths(measure.model, measure, n_traj, spec, steps, [F], seed, backend, threads,
                                 reducer=reduce))
    Y = S / np.sqrt(np.array(T_list))
    out = [_moment_stats(T, Y[:, k]) for k, T in enumerate(T_list)]
    diffs = []
    c = Y - Y.mean(axis=0)
    n = Y.shape[0]
    for k in range(1, len(T_list)):
        d = c[:, k] ** 2 - c[:, 0] ** 2
        diffs.append((T_list[k], float(d.sum() / (n - 1)), float(d.std(ddof=1) / math.sqrt(n))))
    samples = {T: Y[:, k].copy() for k, T in enumerate(T_list)} if keep_samples else None
    return CLTResult(out, [], diffs, samples)


# --- Monte Carlo variance decay ----------------------------------------------------------------------


def mc_variance_curve(measure: GaussianMeasure, t_list: Sequence[float], n_traj: int, seed: int,
                      spec: IntegratorSpec, origins: Sequence[float] = (0.0,), backend: str | None = None,
                      threads: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``Var(P_t f)`` for ``f = x_k^2`` from stationary paths, with standard errors.

    Reversibility gives ``Var(P_t f) = Cov(f(Y_s), f(Y_{s+2t}))``; the estimate is averaged
    over all sites ``k`` (translation invariance) and the time origins ``s``, using the exact
    mean ``E f = r G_00``.  Standard errors are across trajectories.
    """
    model = measure.model
    mean_f = measure.cov(0, 0)
    origins = [float(s) for s in origins]
    t_list = [float(t) for t in t_list]
    need = sorted({round(s, 12) for s in origins} | {round(s + 2 * t, 12) for s in origins for t in t_list})
    steps = epoch_steps(max(need), spec.dt, need)
    pos = {v: k for k, v in enumerate(need)}
    from .integrators import Integrator, initial_batch
    from ._backend import resolve_threads, set_threads

    set_threads(resolve_threads(threads))
    integ = Integrator(model, spec, backend)
    per_traj = []
    chunk = 1024
    for c0 in range(0, n_traj, chunk):
        trajs = np.arange(c0, min(n_traj, c0 + chunk), dtype=np.uint64)
        X = initial_batch(measure, trajs, seed, model)
        snaps = np.empty((len(trajs), len(steps), model.n_sites))
        cur = 0
        for e, s in enumerate(steps):
            integ.advance(X, trajs, seed, cur, int(s) - cur)
            cur = int(s)
            snaps[:, e] = X * X - mean_f
        est = np.empty((len(trajs), len(t_list)))
        for k, t in enumerate(t_list):
            acc = 0.0
            for s in origins:
                acc = acc + np.mean(snaps[:, pos[round(s, 12)]] * snaps[:, pos[round(s + 2 * t, 12)]], axis=1)
            est[:, k] = acc / len(origins)
        per_traj.append(est)
    est = np.concatenate(per_traj)
    return est.mean(axis=0), est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])
