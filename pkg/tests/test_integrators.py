import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rotorlattice import Configuration, GaussianMeasure, IntegratorSpec, ensemble, simulate
from rotorlattice._backend import HAVE_NUMBA
from rotorlattice.integrators import (
    Integrator,
    IntegratorError,
    epoch_steps,
    initial_batch,
    split_mean_factor,
    step_em,
    step_heun,
    step_splitting,
)
from rotorlattice.rng import TrajectoryStream

from conftest import GENERAL_1D, GENERAL_2D, make_model

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not importable")

CASES = [
    ("split_exact", "lie", (2, 4, None)),
    ("split_exact", "strang", (2, 4, None)),
    ("split_exact", "random_perm", (1, 8, None)),
    ("split_exact", "strang", (1, 9, GENERAL_1D)),
    ("split_exact", "random_perm", (2, 6, GENERAL_2D)),
    ("em_ito", "strang", (2, 6, GENERAL_2D)),
    ("em_ito", "strang", (1, 8, None)),
    ("heun_strat", "strang", (2, 6, GENERAL_2D)),
]


def _start(model, B, seed=3):
    return GaussianMeasure(model, 1.0).sample(np.random.default_rng(seed), B)


@needs_numba
@pytest.mark.parametrize("scheme,order,geom", CASES)
def test_backends_agree(scheme, order, geom):
    model = make_model(*geom[:2], 1.0, geom[2])
    spec = IntegratorSpec(scheme, 0.002 if scheme != "split_exact" else 0.05, order, beta=0.1)
    X0 = _start(model, 5)
    out = {}
    for be in ("numba", "numpy"):
        X = X0.copy()
        Integrator(model, spec, be).advance(X, np.arange(10, 15, dtype=np.uint64), 99, 4, 20)
        out[be] = X
    np.testing.assert_allclose(out["numba"], out["numpy"], rtol=1e-11, atol=1e-11)


@pytest.mark.parametrize("scheme,order,geom", CASES)
def test_results_do_not_depend_on_call_split_or_batch(scheme, order, geom):
    model = make_model(*geom[:2], 1.0, geom[2])
    spec = IntegratorSpec(scheme, 0.002 if scheme != "split_exact" else 0.05, order)
    integ = Integrator(model, spec)
    trajs = np.arange(6, dtype=np.uint64)
    X0 = _start(model, 6)
    A = X0.copy()
    integ.advance(A, trajs, 5, 0, 12)
    B = X0.copy()
    integ.advance(B, trajs, 5, 0, 7)
    integ.advance(B, trajs, 5, 7, 5)
    assert np.array_equal(A, B)
    C = X0[3:4].copy()
    integ.advance(C, trajs[3:4], 5, 0, 12)
    assert np.array_equal(C[0], A[3])


@given(st.integers(0, 2**32), st.sampled_from(["lie", "strang", "random_perm"]))
def test_split_conserves_V(seed, order):
    for geom, tol in (((2, 4, None), 1e-12), ((1, 9, GENERAL_1D), 1e-10)):
        model = make_model(*geom[:2], 1.2, geom[2])
        X = _start(model, 4, seed)
        V0 = model.potential(X)
        Integrator(model, IntegratorSpec("split_exact", 0.1, order)).advance(X, np.arange(4, dtype=np.uint64),
                                                                             seed, 0, 200)
        assert np.max(np.abs(model.potential(X) - V0) / V0) <= tol


def test_lie_step_is_a_composition_of_pair_flows():
    model = make_model(1, 9, 1.0, GENERAL_1D)
    x = Configuration(_start(model, 1)[0], model)
    dt = 0.3
    rng = TrajectoryStream(17, 2)
    got = step_splitting(x, dt, rng, "lie", step=4)
    classes = model.lattice.sublattice_classes(1)
    epad = 4 * -(-max(len(c.edges) for c in classes) // 4)
    z = rng.normals(4, 0, epad * len(classes))
    y = x.values.copy()
    for q, c in enumerate(classes):
        for e, (i, j) in enumerate(c.edges.tolist()):
            y = model.flow(y, i, j, math.sqrt(dt) * z[q * epad + e])
    np.testing.assert_allclose(got.values, y, rtol=1e-12, atol=1e-12)


def test_single_em_and_heun_steps():
    model = make_model(1, 8, 1.0)
    x = Configuration(_start(model, 1)[0], model)
    rng = TrajectoryStream(3, 0)
    dt = 0.01
    dW = math.sqrt(dt) * rng.normals(0, 0, model.n_sites).reshape(model.n_sites, 1)
    em = step_em(x, dt, rng)
    np.testing.assert_allclose(em.values, x.values + model.drift(x.values) * dt + model.diffusion(x.values, dW),
                               rtol=1e-13, atol=1e-14)
    he = step_heun(x, dt, rng)
    d1 = model.diffusion(x.values, dW)
    np.testing.assert_allclose(he.values, x.values + 0.5 * (d1 + model.diffusion(x.values + d1, dW)),
                               rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("order", ["lie", "strang", "random_perm"])
@pytest.mark.parametrize("dim,b,beta", [(1, 1.0, 0.0), (2, 0.7, 0.3)])
def test_split_mean_factor_is_analytic(order, dim, b, beta):
    model = make_model(dim, 6, b)
    spec = IntegratorSpec("split_exact", 0.05, order, beta)
    np.testing.assert_allclose(split_mean_factor(model, spec), math.exp(-(dim * b * b + beta) * spec.dt),
                               rtol=1e-12)


def test_split_needs_a_partition():
    with pytest.raises(IntegratorError):
        Integrator(make_model(1, 7), IntegratorSpec())
    with pytest.raises(IntegratorError):
        Integrator(make_model(1, 10, 1.0, "0=3; 1=-0.5; 2=-0.2"), IntegratorSpec())


@pytest.mark.parametrize("kw", [dict(scheme="rk4"), dict(order="yoshida"), dict(dt=0.0), dict(beta=-1.0)])
def test_spec_validation(kw):
    with pytest.raises(IntegratorError):
        IntegratorSpec(**kw)


def test_epoch_steps():
    assert epoch_steps(1.0, 0.1, 5).tolist() == [0, 2, 4, 6, 8, 10]
    assert epoch_steps(1.0, 0.25, [0.5, 1.0]).tolist() == [2, 4]
    with pytest.raises(IntegratorError):
        epoch_steps(1.0, 0.3, [0.5])
    with pytest.raises(IntegratorError):
        epoch_steps(1.0, 0.1, [0.5, 0.2])


def test_ensemble_statistics_and_chunking():
    model = make_model(1, 8)
    mu = GaussianMeasure(model, 2.0)
    spec = IntegratorSpec("split_exact", 0.05)
    a = ensemble(mu, 37, 0.5, spec, ["x0", "x1^2"], 4, epochs=2, keep_paths=True, chunk=5)
    b = ensemble(mu, 37, 0.5, spec, ["x0", "x1^2"], 4, epochs=2, chunk=1000)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12)
    np.testing.assert_allclose(a.var, b.var, rtol=1e-10)
    np.testing.assert_allclose(a.mean[:, :2], a.paths.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(a.var[:, :2], a.paths.var(axis=0, ddof=1), rtol=1e-10)
    assert a.names == ["x0", "x1^2", "V"]
    assert a.times.tolist() == [0.0, 0.25, 0.5]
    assert a.max_rel_V_drift < 1e-13
    one = ensemble(mu, 1, 0.5, spec, ["x0"], 4)
    assert one.flags and np.isnan(one.var).all()
    with pytest.raises(IntegratorError):
        ensemble(mu, 0, 0.5, spec, ["x0"], 4)


def test_initial_batch_samples_the_measure():
    model = make_model(2, 6, 1.0, GENERAL_2D)
    mu = GaussianMeasure(model, 1.5)
    X = initial_batch(mu, np.arange(20000, dtype=np.uint64), 8, model)
    C = np.cov(X[:, :4].T)
    np.testing.assert_allclose(C, mu.covariance_matrix()[:4, :4], atol=0.04)


def test_simulate_records_epochs_and_snapshots():
    model = make_model(2, 4)
    x0 = Configuration(_start(model, 1)[0], model)
    tr = simulate(x0, 1.0, IntegratorSpec("split_exact", 0.1), ["x0"], seed=5, traj=2, epochs=5, snapshots=True)
    assert tr.times.tolist() == pytest.approx([0, 0.2, 0.4, 0.6, 0.8, 1.0])
    assert tr.states.shape == (6, 16)
    np.testing.assert_allclose(tr.V, x0.V, rtol=1e-13)
    again = simulate(x0, 1.0, IntegratorSpec("split_exact", 0.1), ["x0"], seed=5, traj=2, epochs=5)
    assert np.array_equal(tr.values, again.values)
