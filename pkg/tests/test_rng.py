import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rotorlattice.rng import (
    STREAM_NOISE,
    TrajectoryStream,
    block_normals,
    block_uniforms,
    normals_np,
    philox4x64,
    philox4x64_np,
    uniforms_np,
)

u64 = st.integers(0, 2**64 - 1)


def reference_block(counter, key):
    """Philox4x64-10 output from numpy's bit generator (it increments before generating)."""
    packed = sum(int(c) << (64 * k) for k, c in enumerate(counter))
    packed = (packed - 1) % 2**256
    bg = np.random.Philox(counter=packed, key=int(key[0]) + (int(key[1]) << 64))
    return bg.random_raw(4).astype(np.uint64)


@given(st.tuples(u64, u64, u64, u64), st.tuples(u64, u64))
def test_philox_matches_numpy_bit_generator(counter, key):
    ref = reference_block(counter, key)
    got = np.array(philox4x64_np(*counter, *key), dtype=np.uint64).ravel()
    assert np.array_equal(got, ref)


@pytest.mark.parametrize("counter,key", [((0, 0, 0, 0), (0, 0)), ((2**64 - 1,) * 4, (2**64 - 1,) * 2)])
def test_philox_extremes(counter, key):
    ref = reference_block(counter, key)
    assert np.array_equal(np.array(philox4x64_np(*counter, *key), dtype=np.uint64).ravel(), ref)
    nb = np.array(philox4x64(*(np.uint64(c) for c in counter), *(np.uint64(k) for k in key)), dtype=np.uint64)
    assert np.array_equal(nb, ref)


@given(u64, st.integers(0, 2**40), st.integers(0, 50), st.integers(0, 10**6), st.integers(0, 2))
def test_scalar_kernel_matches_vectorized(seed, traj, block, step, stream):
    z = normals_np(seed, traj, step, stream, 4 * (block + 1))[4 * block:]
    args = (np.uint64(seed), np.uint64(traj), block, step, stream)
    np.testing.assert_allclose(block_normals(*args), z, rtol=1e-15, atol=1e-15)
    u = uniforms_np(seed, traj, step, stream, 4 * (block + 1))[4 * block:]
    assert np.array_equal(np.array(block_uniforms(*args)), u)


def test_streams_are_addressable_and_distinct():
    s = TrajectoryStream(7, 3)
    a = s.normals(5, STREAM_NOISE, 10)
    assert np.array_equal(a, TrajectoryStream(7, 3).normals(5, STREAM_NOISE, 10))
    assert np.array_equal(a[:6], s.normals(5, STREAM_NOISE, 6))
    for other in (s.normals(6, 0, 10), s.normals(5, 1, 10), TrajectoryStream(7, 4).normals(5, 0, 10),
                  TrajectoryStream(8, 3).normals(5, 0, 10)):
        assert not np.any(a == other)
    batch = normals_np(7, np.array([2, 3]), 5, 0, 10)
    assert np.array_equal(batch[1], a)


def test_normals_and_uniforms_have_the_right_law():
    z = normals_np(11, np.arange(200), 0, 0, 1000).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    u = uniforms_np(11, np.arange(200), 0, 1, 1000).ravel()
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    assert u.min() >= 0.0 and u.max() < 1.0


def test_seed_range_checked():
    with pytest.raises(ValueError):
        TrajectoryStream(-1)
