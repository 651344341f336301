"""Time integration: Ito Euler-Maruyama, Stratonovich Heun and the conservative splitting scheme.

The splitting scheme flows each edge ``(i, j)`` of a commuting class for a Gaussian
time ``xi ~ N(0, dt)``: an edge carries generator ``1/2 X_ij^2`` and the law of
``exp(xi X_ij)`` solves ``d/dt E f = 1/2 X^2 E f`` exactly.  For diagonal ``M = b Id``
the flow is a plane rotation by ``b xi``, so the mean contracts per incident edge by
``E cos(b xi) = exp(-b^2 dt / 2)`` and per step by ``exp(-N b^2 dt)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from ._backend import resolve_backend, resolve_threads, set_threads
from .measure import GaussianMeasure, PolynomialObservable
from .model import Configuration, LatticeModel
from .rng import STREAM_INITIAL, TrajectoryStream, normals_np

SCHEMES = ("em_ito", "heun_strat", "split_exact")
ORDERS = ("lie", "strang", "random_perm")
DEFAULT_CHUNK = 2048


class IntegratorError(ValueError):
    """Invalid integrator configuration."""


@dataclass(frozen=True)
class IntegratorSpec:
    scheme: str = "split_exact"
    dt: float = 0.01
    order: str = "strang"
    beta: float = 0.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise IntegratorError(f"unknown scheme {self.scheme!r}; choose one of {SCHEMES}")
        if self.order not in ORDERS:
            raise IntegratorError(f"unknown splitting order {self.order!r}; choose one of {ORDERS}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise IntegratorError(f"dt must be positive and finite, got {self.dt}")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise IntegratorError(f"beta must be nonnegative, got {self.beta}")


@dataclass
class SplitPlan:
    """Padded class tables and the per-step sweep schedule of the splitting scheme."""

    ei: np.ndarray
    ej: np.ndarray
    sizes: np.ndarray
    cls_m: np.ndarray
    sweep_class: np.ndarray
    sweep_frac: np.ndarray
    perm_mode: bool
    epad: int

    @property
    def n_classes(self) -> int:
        return self.sizes.size


def commuting_classes(model: LatticeModel) -> list[np.ndarray]:
    """Edge arrays of the commuting classes used by the splitting scheme."""
    lat = model.lattice
    try:
        if model.is_diagonal:
            return [c.edges for c in lat.edge_classes()]
        return [c.edges for c in lat.sublattice_classes(model.stencil.range)]
    except ValueError as exc:
        raise IntegratorError(f"split_exact cannot partition this lattice: {exc}") from None


def build_split_plan(model: LatticeModel, order: str) -> SplitPlan:
    classes = commuting_classes(model)
    C = len(classes)
    emax = max(len(c) for c in classes)
    ei = np.zeros((C, emax), dtype=np.int64)
    ej = np.zeros((C, emax), dtype=np.int64)
    sizes = np.array([len(c) for c in classes], dtype=np.int64)
    axes = []
    for k, c in enumerate(classes):
        ei[k, : len(c)] = c[:, 0]
        ej[k, : len(c)] = c[:, 1]
        diff = (model.lattice.all_coords[c[0, 1]] - model.lattice.all_coords[c[0, 0]]) % model.lattice.side
        axes.append(int(np.nonzero(diff)[0][0]))
    cls_m = model.axis_coupling[np.array(axes)].astype(float)
    if order == "strang" and C > 1:
        sweep_class = np.concatenate([np.arange(C - 1), [C - 1], np.arange(C - 2, -1, -1)])
        sweep_frac = np.where(sweep_class == C - 1, 1.0, 0.5)
    else:
        sweep_class = np.arange(C)
        sweep_frac = np.ones(C)
    return SplitPlan(ei, ej, sizes, cls_m, sweep_class.astype(np.int64), sweep_frac.astype(float),
                     order == "random_perm", 4 * (-(-emax // 4)))


def split_mean_factor(model: LatticeModel, spec: IntegratorSpec) -> np.ndarray:
    """Exact per-step factor of ``x -> E[Y_dt | Y_0 = x]`` for the splitting scheme, per site.

    Under ``M = b Id`` a flow for Gaussian time of variance ``v`` maps the mean of each
    endpoint by ``E cos(b xi) = exp(-b^2 v / 2)``; sweeps compose multiplicatively.
    """
    if not model.is_diagonal:
        raise IntegratorError("the mean map is diagonal only for M = b Id")
    plan = build_split_plan(model, spec.order)
    b2 = model.center**2
    factor = np.ones(model.n_sites)
    for c, frac in zip(plan.sweep_class, plan.sweep_frac):
        sites = np.concatenate([plan.ei[c, : plan.sizes[c]], plan.ej[c, : plan.sizes[c]]])
        factor[sites] *= math.exp(-0.5 * b2 * frac * spec.dt)
    return factor * math.exp(-spec.beta * spec.dt)


def split_second_moments(w0: np.ndarray, n_steps: int, model: LatticeModel, spec: IntegratorSpec) -> np.ndarray:
    """Exact ``E[Y_k^2]`` after ``n_steps`` splitting steps from squared start values ``w0`` (``M = b Id``).

    A rotation by a centered Gaussian angle of variance ``v`` averages the two squared
    endpoints with weights ``(1 +- exp(-2 v)) / 2`` and leaves no cross term, so the
    diagonal evolves on its own.  The ``random_perm`` order is averaged over permutations
    only in law, so it is not covered.
    """
    if not model.is_diagonal:
        raise IntegratorError("the second-moment map is closed only for M = b Id")
    if spec.order == "random_perm":
        raise IntegratorError("random_perm has no fixed sweep order")
    plan = build_split_plan(model, spec.order)
    b2 = model.center**2
    w = np.array(w0, dtype=float)
    sweeps = []
    for c, frac in zip(plan.sweep_class, plan.sweep_frac):
        keep = 0.5 * (1.0 + math.exp(-2.0 * b2 * frac * spec.dt))
        sweeps.append((plan.ei[c, : plan.sizes[c]], plan.ej[c, : plan.sizes[c]], keep))
    damp = math.exp(-2.0 * spec.beta * spec.dt)
    for _ in range(int(n_steps)):
        for i, j, keep in sweeps:
            wi, wj = w[i], w[j]
            w[i] = keep * wi + (1.0 - keep) * wj
            w[j] = keep * wj + (1.0 - keep) * wi
        w *= damp
    return w


class Integrator:
    """Advances batches of configurations under one :class:`IntegratorSpec`."""

    def __init__(self, model: LatticeModel, spec: IntegratorSpec, backend: str | None = None):
        self.model = model
        self.spec = spec
        self.backend = resolve_backend(backend)
        self.plan = build_split_plan(model, spec.order) if spec.scheme == "split_exact" else None
        nt = model.lattice.neighbor_table
        self._minus = np.ascontiguousarray(nt[:, 0::2])
        self._plus = np.ascontiguousarray(nt[:, 1::2])

    def advance(self, X: np.ndarray, trajs: np.ndarray, seed: int, step0: int, n_steps: int) -> None:
        """Advance ``X`` (shape ``(B, n_sites)``, modified in place) by ``n_steps`` steps."""
        if n_steps <= 0:
            return
        sp, m = self.spec, self.model
        trajs = np.ascontiguousarray(trajs, dtype=np.uint64)
        seed = np.uint64(seed)
        if sp.scheme == "split_exact":
            p = self.plan
            fn = _kernels.split_nb if self.backend == "numba" else _kernels.split_np
            fn(X, trajs, seed, int(step0), int(n_steps), float(sp.dt), float(sp.beta), p.ei, p.ej,
               p.sizes, p.cls_m, p.sweep_class, p.sweep_frac, bool(p.perm_mode), int(p.epad),
               bool(m.is_diagonal), float(m.center), m.table, m.coeffs)
        elif sp.scheme == "em_ito":
            if self.backend == "numba":
                _kernels.em_nb(X, trajs, seed, int(step0), int(n_steps), float(sp.dt), float(sp.beta),
                               m.table, m.coeffs, float(m.center), self._minus, self._plus,
                               m.axis_coupling.astype(float))
            else:
                _kernels.em_np(X, trajs, seed, int(step0), int(n_steps), float(sp.dt), float(sp.beta), m)
        else:
            if self.backend == "numba":
                _kernels.heun_nb(X, trajs, seed, int(step0), int(n_steps), float(sp.dt), float(sp.beta),
                                 m.table, m.coeffs, self._minus, self._plus)
            else:
                _kernels.heun_np(X, trajs, seed, int(step0), int(n_steps), float(sp.dt), float(sp.beta), m)


# --- single steps on one configuration ----------------------------------------------


def _single_step(x: Configuration, spec: IntegratorSpec, rng: TrajectoryStream, step: int) -> Configuration:
    X = x.values[None, :].copy()
    Integrator(x.model, spec, backend="numpy").advance(X, np.array([rng.traj]), rng.seed, step, 1)
    return Configuration(X[0], x.model)


def step_em(x: Configuration, dt: float, rng: TrajectoryStream, beta: float = 0.0, step: int = 0) -> Configuration:
    """One Euler-Maruyama step of the Ito system."""
    return _single_step(x, IntegratorSpec("em_ito", dt, beta=beta), rng, step)


def step_heun(x: Configuration, dt: float, rng: TrajectoryStream, beta: float = 0.0, step: int = 0) -> Configuration:
    """One Heun predictor-corrector step of the Stratonovich system."""
    return _single_step(x, IntegratorSpec("heun_strat", dt, beta=beta), rng, step)


def step_splitting(x: Configuration, dt: float, rng: TrajectoryStream, order: str = "lie",
                   beta: float = 0.0, step: int = 0) -> Configuration:
    """One step of the splitting scheme; conserves ``V`` up to rounding when ``beta = 0``."""
    return _single_step(x, IntegratorSpec("split_exact", dt, order, beta), rng, step)


# --- observables and schedules ------------------------------------------------------


def epoch_steps(T: float, dt: float, epochs) -> np.ndarray:
    """Step indices of the recording epochs; ``epochs`` is an interval count or explicit times."""
    if np.ndim(epochs) == 0:
        n = int(epochs)
        if n < 1:
            raise IntegratorError(f"epochs must be >= 1, got {epochs}")
        times = np.linspace(0.0, T, n + 1) if T > 0 else np.zeros(1)
    else:
        times = np.asarray(epochs, dtype=float)
    ratio = times / dt
    steps = np.rint(ratio).astype(np.int64)
    if np.any(np.abs(ratio - steps) > 1e-9 * np.maximum(1.0, ratio)):
        raise IntegratorError(f"epoch times must be multiples of dt={dt}")
    if np.any(np.diff(steps) <= 0) and steps.size > 1:
        raise IntegratorError("epoch times must be strictly increasing")
    if steps[0] < 0:
        raise IntegratorError("epoch times must be nonnegative")
    return steps


def _named_observables(observables) -> tuple[list[str], list[PolynomialObservable]]:
    names, polys = [], []
    for ob in observables or []:
        if isinstance(ob, tuple):
            name, poly = ob
        elif isinstance(ob, str):
            name, poly = ob, PolynomialObservable.parse(ob)
        else:
            name, poly = str(ob), ob
        names.append(name)
        polys.append(poly)
    return names, polys


def _evaluate_all(polys, model, X) -> np.ndarray:
    """Observable values plus ``V`` last: shape ``(B, n_obs + 1)``."""
    cols = [p.evaluate(X) for p in polys]
    cols.append(model.potential(X))
    return np.stack(cols, axis=-1)


@dataclass
class Trajectory:
    times: np.ndarray
    names: list[str]
    values: np.ndarray  # (n_epochs, n_obs)
    V: np.ndarray  # (n_epochs,)
    seed: int
    traj: int
    spec: IntegratorSpec
    states: np.ndarray | None = None  # (n_epochs, n_sites)


def simulate(x0: Configuration, T: float, spec: IntegratorSpec, observables=(), seed: int = 0,
             traj: int = 0, epochs=1, snapshots: bool = False, backend: str | None = None) -> Trajectory:
    """Integrate one trajectory and record observables and ``V`` at each epoch."""
    if T < 0:
        raise IntegratorError(f"T must be nonnegative, got {T}")
    model = x0.model
    steps = epoch_steps(T, spec.dt, epochs) if T > 0 else np.zeros(1, dtype=np.int64)
    names, polys = _named_observables(observables)
    integ = Integrator(model, spec, backend)
    X = x0.values[None, :].copy()
    trajs = np.array([traj], dtype=np.uint64)
    vals, states = [], []
    cur = 0
    for s in steps:
        integ.advance(X, trajs, seed, cur, int(s) - cur)
        cur = int(s)
        vals.append(_evaluate_all(polys, model, X)[0])
        if snapshots:
            states.append(X[0].copy())
    vals = np.array(vals)
    return Trajectory(steps * spec.dt, names, vals[:, :-1], vals[:, -1], int(seed), int(traj), spec,
                      np.array(states) if snapshots else None)


# --- ensembles ------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    times: np.ndarray
    names: list[str]
    mean: np.ndarray  # (n_epochs, n_obs)
    var: np.ndarray
    stderr: np.ndarray
    n_traj: int
    seed: int
    spec: IntegratorSpec
    max_rel_V_drift: float
    flags: list[str] = field(default_factory=list)
    paths: np.ndarray | None = None  # (n_traj, n_epochs, n_obs) when requested


def initial_batch(start, trajs: np.ndarray, seed: int, model: LatticeModel) -> np.ndarray:
    """Initial states: a fixed configuration, or draws from a :class:`GaussianMeasure`."""
    if isinstance(start, GaussianMeasure):
        white = normals_np(seed, trajs, 0, STREAM_INITIAL, model.n_sites)
        return np.ascontiguousarray(start.color(white))
    x0 = start.values if isinstance(start, Configuration) else np.asarray(start, dtype=float)
    if x0.shape != (model.n_sites,):
        raise IntegratorError(f"start state must have {model.n_sites} entries")
    return np.tile(x0, (len(trajs), 1))


def run_paths(model: LatticeModel, start, n_traj: int, spec: IntegratorSpec, steps: np.ndarray,
              polys: Sequence[PolynomialObservable], seed: int, backend: str | None = None,
              threads: int | None = None, chunk: int = DEFAULT_CHUNK, traj_offset: int = 0,
              reducer=None):
    """Simulate ``n_traj`` trajectories chunk by chunk.

    Each chunk yields an array ``(B, n_epochs, n_obs + 1)`` (``V`` last) that is passed to
    ``reducer(chunk_index, values)`` in trajectory order; returns the list of reducer outputs.
    """
    set_threads(resolve_threads(threads))
    integ = Integrator(model, spec, backend)
    outs = []
    for c0 in range(0, n_traj, chunk):
        trajs = np.arange(traj_offset + c0, traj_offset + min(n_traj, c0 + chunk), dtype=np.uint64)
        X = initial_batch(start, trajs, seed, model)
        vals = np.empty((len(trajs), len(steps), len(polys) + 1))
        cur = 0
        for e, s in enumerate(steps):
            integ.advance(X, trajs, seed, cur, int(s) - cur)
            cur = int(s)
            vals[:, e, :] = _evaluate_all(polys, model, X)
        outs.append(reducer(c0 // chunk, vals) if reducer else vals)
    return outs


def _merge_moments(stats):
    """Chan's pairwise combination of ``(n, mean, M2)`` in list order."""
    n, mean, m2 = stats[0]
    for nb, mb, m2b in stats[1:]:
        tot = n + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta**2 * (n * nb / tot)
        n = tot
    return n, mean, m2


def ensemble(start, n_traj: int, T: float, spec: IntegratorSpec, observables, master_seed: int,
             model: LatticeModel | None = None, epochs=1, backend: str | None = None,
             threads: int | None = None, keep_paths: bool = False, chunk: int = DEFAULT_CHUNK) -> EnsembleResult:
    """Per-epoch mean, variance and standard error over independent trajectories.

    Trajectory ``j`` uses the counter stream keyed by ``(master_seed, j)``; chunks are
    reduced in trajectory order, so results do not depend on the thread count.
    """
    if model is None:
        model = start.model
    if n_traj < 1:
        raise IntegratorError(f"n_traj must be >= 1, got {n_traj}")
    steps = epoch_steps(T, spec.dt, epochs) if T > 0 else np.zeros(1, dtype=np.int64)
    names, polys = _named_observables(observables)

    def reduce(_, vals):
        v0 = vals[:, :1, -1]
        drift = np.abs(vals[:, :, -1] - v0) / np.maximum(np.abs(v0), 1e-300)
        stat = (vals.shape[0], vals.mean(axis=0), ((vals - vals.mean(axis=0)) ** 2).sum(axis=0))
        return stat, float(drift.max()), vals if keep_paths else None

    parts = run_paths(model, start, n_traj, spec, steps, polys, master_seed, backend, threads, chunk,
                      reducer=reduce)
    n, mean, m2 = _merge_moments([p[0] for p in parts])
    flags = []
    if n < 2:
        var = np.full_like(mean, np.nan)
        flags.append("n_traj=1: variance undefined")
    else:
        var = m2 / (n - 1)
    stderr = np.sqrt(var / n)
    paths = np.concatenate([p[2] for p in parts])[:, :, :-1] if keep_paths else None
    return EnsembleResult(steps * spec.dt, names + ["V"], mean, var, stderr, n, int(master_seed), spec,
                          max(p[1] for p in parts), flags, paths)
