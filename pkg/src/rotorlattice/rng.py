"""Counter-based Philox4x64-10 streams.

Every random number is a pure function of ``(seed, trajectory, step, stream, slot)``:
the key is ``(seed, trajectory)`` and the counter is ``(slot // 4, step, stream, 0)``.
One Philox block yields four standard normals by Box-Muller on the lane pairs
``(0, 1)`` and ``(2, 3)``.  The numba and numpy implementations agree bit for bit
on the raw integers; transformed normals agree to rounding of ``log``/``cos``/``sin``.
"""

from __future__ import annotations

import numpy as np

from ._backend import njit

U64 = np.uint64
_M0 = U64(0xD2E7470EE14C6C93)
_M1 = U64(0xCA5A826395121157)
_W0 = U64(0x9E3779B97F4A7C15)
_W1 = U64(0xBB67AE8584CAA73B)
_MASK32 = U64(0xFFFFFFFF)
_S32 = U64(32)
_S11 = U64(11)
_ONE = U64(1)
_TWO53_INV = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi

STREAM_NOISE = 0
STREAM_PERMUTATION = 1
STREAM_INITIAL = 2


@njit(inline="always")
def _mulhilo(a, b):
    alo = a & _MASK32
    ahi = a >> _S32
    blo = b & _MASK32
    bhi = b >> _S32
    ll = alo * blo
    hl = ahi * blo
    lh = alo * bhi
    hh = ahi * bhi
    cross = (ll >> _S32) + (hl & _MASK32) + (lh & _MASK32)
    hi = hh + (hl >> _S32) + (lh >> _S32) + (cross >> _S32)
    return hi, a * b


@njit(inline="always")
def philox4x64(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit(inline="always")
def _box_muller(ra, rb):
    u1 = ((ra >> _S11) + _ONE) * _TWO53_INV
    u2 = (rb >> _S11) * _TWO53_INV
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    return rad * np.cos(ang), rad * np.sin(ang)


@njit(inline="always")
def block_normals(seed, traj, block, step, stream):
    """Four standard normals for one counter block (numba or plain Python scalars)."""
    r0, r1, r2, r3 = philox4x64(U64(block), U64(step), U64(stream), U64(0), U64(seed), U64(traj))
    z0, z1 = _box_muller(r0, r1)
    z2, z3 = _box_muller(r2, r3)
    return z0, z1, z2, z3


@njit(inline="always")
def block_uniforms(seed, traj, block, step, stream):
    r0, r1, r2, r3 = philox4x64(U64(block), U64(step), U64(stream), U64(0), U64(seed), U64(traj))
    return (
        (r0 >> _S11) * _TWO53_INV,
        (r1 >> _S11) * _TWO53_INV,
        (r2 >> _S11) * _TWO53_INV,
        (r3 >> _S11) * _TWO53_INV,
    )


# --- vectorized numpy versions -------------------------------------------------


def _mulhilo_np(a, b):
    alo = a & _MASK32
    ahi = a >> _S32
    blo = b & _MASK32
    bhi = b >> _S32
    ll = alo * blo
    hl = ahi * blo
    lh = alo * bhi
    hh = ahi * bhi
    cross = (ll >> _S32) + (hl & _MASK32) + (lh & _MASK32)
    hi = hh + (hl >> _S32) + (lh >> _S32) + (cross >> _S32)
    return hi, a * b


def philox4x64_np(c0, c1, c2, c3, k0, k1):
    """Philox4x64-10 on broadcastable uint64 arrays."""
    c0, c1, c2, c3, k0, k1 = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.uint64) for v in (c0, c1, c2, c3, k0, k1))
    )
    k0 = k0.copy()
    k1 = k1.copy()
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo_np(_M0, c0)
            hi1, lo1 = _mulhilo_np(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 += _W0
            k1 += _W1
    return c0, c1, c2, c3


def _box_muller_np(ra, rb):
    u1 = ((ra >> _S11) + _ONE).astype(np.float64) * _TWO53_INV
    u2 = (rb >> _S11).astype(np.float64) * _TWO53_INV
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    return rad * np.cos(ang), rad * np.sin(ang)


def normals_np(seed, traj, step, stream, n_slots: int) -> np.ndarray:
    """Normals for slots ``0..n_slots-1`` of each trajectory: shape ``traj.shape + (n_slots,)``."""
    traj = np.asarray(traj, dtype=np.uint64)
    nb = -(-int(n_slots) // 4)
    blocks = np.arange(nb, dtype=np.uint64)
    r = philox4x64_np(blocks, U64(step), U64(stream), U64(0), U64(seed), traj[..., None])
    z0, z1 = _box_muller_np(r[0], r[1])
    z2, z3 = _box_muller_np(r[2], r[3])
    z = np.stack([z0, z1, z2, z3], axis=-1).reshape(traj.shape + (4 * nb,))
    return z[..., :n_slots]


def uniforms_np(seed, traj, step, stream, n_slots: int) -> np.ndarray:
    traj = np.asarray(traj, dtype=np.uint64)
    nb = -(-int(n_slots) // 4)
    blocks = np.arange(nb, dtype=np.uint64)
    r = philox4x64_np(blocks, U64(step), U64(stream), U64(0), U64(seed), traj[..., None])
    u = np.stack([(v >> _S11).astype(np.float64) * _TWO53_INV for v in r], axis=-1)
    return u.reshape(traj.shape + (4 * nb,))[..., :n_slots]


class TrajectoryStream:
    """Random numbers of one trajectory, addressed by ``(step, stream, slot)``."""

    def __init__(self, seed: int, traj: int = 0):
        if not 0 <= int(seed) < 2**64 or not 0 <= int(traj) < 2**64:
            raise ValueError("seed and trajectory index must lie in [0, 2**64)")
        self.seed = int(seed)
        self.traj = int(traj)

    def normals(self, step: int, stream: int, n: int) -> np.ndarray:
        return normals_np(self.seed, self.traj, step, stream, n)

    def uniforms(self, step: int, stream: int, n: int) -> np.ndarray:
        return uniforms_np(self.seed, self.traj, step, stream, n)

    def __repr__(self) -> str:
        return f"TrajectoryStream(seed={self.seed}, traj={self.traj})"
