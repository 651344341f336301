"""Hot loops of the integrators, as numba kernels and as vectorized numpy fallbacks.

All kernels advance a batch ``X`` of shape ``(B, n_sites)`` in place from global
step ``step0`` for ``n_steps`` steps.  Noise for step ``s`` of trajectory ``t`` is
drawn from the counter ``(slot // 4, s, 0, 0)`` under key ``(seed, t)``, so results
do not depend on how a run is cut into calls, on batch composition or on threads.

Slot layout per step:
  splitting: sweep position ``q`` and edge position ``e`` use slot ``q * epad + e``;
  em/heun: site ``i`` and axis ``k`` use slot ``i * N + k``.
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import njit, prange
from .rng import (
    STREAM_NOISE,
    STREAM_PERMUTATION,
    block_normals,
    block_uniforms,
    normals_np,
    uniforms_np,
)

# --- numba kernels -------------------------------------------------------------


@njit(inline="always")
def _grad_at(x, table, coeffs, i):
    acc = 0.0
    for q in range(coeffs.size):
        acc += coeffs[q] * x[table[i, q]]
    return acc


@njit(parallel=True, cache=True)
def split_nb(X, trajs, seed, step0, n_steps, dt, beta, ei, ej, sizes, cls_m, sweep_class,
             sweep_frac, perm_mode, epad, diag, center, table, coeffs):
    B = X.shape[0]
    S = sweep_class.size
    C = sizes.size
    decay = math.exp(-beta * dt)
    a = center
    for bidx in prange(B):
        x = X[bidx]
        tr = trajs[bidx]
        order = sweep_class.copy()
        frac = sweep_frac.copy()
        zbuf = np.empty(4)
        ubuf = np.empty(4 * ((C + 3) // 4))
        for s in range(n_steps):
            step = step0 + s
            if perm_mode:
                for blk in range((C + 3) // 4):
                    u0, u1, u2, u3 = block_uniforms(seed, tr, blk, step, STREAM_PERMUTATION)
                    ubuf[4 * blk] = u0
                    ubuf[4 * blk + 1] = u1
                    ubuf[4 * blk + 2] = u2
                    ubuf[4 * blk + 3] = u3
                order = np.argsort(ubuf[:C])
            for q in range(S):
                c = order[q]
                sd = math.sqrt(frac[q] * dt)
                base = q * epad
                mij = cls_m[c]
                for e in range(sizes[c]):
                    slot = base + e
                    lane = slot & 3
                    if lane == 0:
                        z0, z1, z2, z3 = block_normals(seed, tr, slot >> 2, step, STREAM_NOISE)
                        zbuf[0] = z0
                        zbuf[1] = z1
                        zbuf[2] = z2
                        zbuf[3] = z3
                    tau = sd * zbuf[lane]
                    i = ei[c, e]
                    j = ej[c, e]
                    xi = x[i]
                    xj = x[j]
                    if diag:
                        th = a * tau
                        cs = math.cos(th)
                        sn = math.sin(th)
                        x[i] = cs * xi - sn * xj
                        x[j] = sn * xi + cs * xj
                    else:
                        hi = _grad_at(x, table, coeffs, i) - a * xi - mij * xj
                        hj = _grad_at(x, table, coeffs, j) - mij * xi - a * xj
                        w2 = a * a - mij * mij
                        w = math.sqrt(w2)
                        si = (-a * hi + mij * hj) / w2
                        sj = (mij * hi - a * hj) / w2
                        yi = xi - si
                        yj = xj - sj
                        cs = math.cos(w * tau)
                        sn = math.sin(w * tau) / w
                        x[i] = si + cs * yi - sn * (mij * yi + a * yj)
                        x[j] = sj + cs * yj + sn * (a * yi + mij * yj)
            if beta > 0.0:
                for i in range(x.size):
                    x[i] *= decay


@njit(inline="always")
def _fill_noise(xi, seed, tr, step):
    m = xi.size
    for blk in range((m + 3) // 4):
        z0, z1, z2, z3 = block_normals(seed, tr, blk, step, STREAM_NOISE)
        k = 4 * blk
        xi[k] = z0
        if k + 1 < m:
            xi[k + 1] = z1
        if k + 2 < m:
            xi[k + 2] = z2
        if k + 3 < m:
            xi[k + 3] = z3


@njit(inline="always")
def _grad_all(x, g, table, coeffs):
    for i in range(x.size):
        g[i] = _grad_at(x, table, coeffs, i)


@njit(inline="always")
def _diffusion(g, xi, minus, plus, ndim, out, scale):
    for i in range(g.size):
        acc = 0.0
        for k in range(ndim):
            im = minus[i, k]
            acc += g[im] * xi[im * ndim + k] - g[plus[i, k]] * xi[i * ndim + k]
        out[i] = scale * acc


@njit(parallel=True, cache=True)
def em_nb(X, trajs, seed, step0, n_steps, dt, beta, table, coeffs, center, minus, plus, axis_c):
    B, n = X.shape
    ndim = minus.shape[1]
    sq = math.sqrt(dt)
    for bidx in prange(B):
        x = X[bidx]
        tr = trajs[bidx]
        g = np.empty(n)
        xi = np.empty(n * ndim)
        dif = np.empty(n)
        for s in range(n_steps):
            _grad_all(x, g, table, coeffs)
            _fill_noise(xi, seed, tr, step0 + s)
            _diffusion(g, xi, minus, plus, ndim, dif, sq)
            for i in range(n):
                drift = -ndim * center * g[i]
                for k in range(ndim):
                    drift += 0.5 * axis_c[k] * (g[minus[i, k]] + g[plus[i, k]])
                dif[i] += dt * (drift - beta * x[i])
            for i in range(n):
                x[i] += dif[i]


@njit(parallel=True, cache=True)
def heun_nb(X, trajs, seed, step0, n_steps, dt, beta, table, coeffs, minus, plus):
    B, n = X.shape
    ndim = minus.shape[1]
    sq = math.sqrt(dt)
    half = math.exp(-0.5 * beta * dt)
    for bidx in prange(B):
        x = X[bidx]
        tr = trajs[bidx]
        g = np.empty(n)
        xi = np.empty(n * ndim)
        d1 = np.empty(n)
        d2 = np.empty(n)
        y = np.empty(n)
        for s in range(n_steps):
            if beta > 0.0:
                for i in range(n):
                    x[i] *= half
            _fill_noise(xi, seed, tr, step0 + s)
            _grad_all(x, g, table, coeffs)
            _diffusion(g, xi, minus, plus, ndim, d1, sq)
            for i in range(n):
                y[i] = x[i] + d1[i]
            _grad_all(y, g, table, coeffs)
            _diffusion(g, xi, minus, plus, ndim, d2, sq)
            for i in range(n):
                x[i] += 0.5 * (d1[i] + d2[i])
                if beta > 0.0:
                    x[i] *= half


# --- numpy fallbacks ---------------------------------------------------------------


def split_np(X, trajs, seed, step0, n_steps, dt, beta, ei, ej, sizes, cls_m, sweep_class,
             sweep_frac, perm_mode, epad, diag, center, table, coeffs):
    S = sweep_class.size
    C = sizes.size
    decay = math.exp(-beta * dt)
    a = center
    rows = np.arange(X.shape[0])[:, None]
    for s in range(n_steps):
        step = step0 + s
        z = normals_np(seed, trajs, step, STREAM_NOISE, S * epad)
        if perm_mode:
            u = uniforms_np(seed, trajs, step, STREAM_PERMUTATION, C)
            orders = np.argsort(u, axis=1)
        for q in range(S):
            sd = math.sqrt(sweep_frac[q] * dt)
            if perm_mode:
                cls = orders[:, q]
                m = sizes[cls]
                if np.any(m != m[0]):
                    # ragged classes: fall back to one trajectory at a time
                    for b in range(X.shape[0]):
                        _split_apply(X[b:b + 1], np.arange(1)[:, None], z[b:b + 1, q * epad:],
                                     ei[cls[b]], ej[cls[b]], sizes[cls[b]], cls_m[cls[b]],
                                     sd, diag, a, table, coeffs)
                    continue
                _split_apply(X, rows, z[:, q * epad:], ei[cls], ej[cls], m[0], cls_m[cls][:, None],
                             sd, diag, a, table, coeffs)
            else:
                c = sweep_class[q]
                _split_apply(X, rows, z[:, q * epad:], ei[c], ej[c], sizes[c], cls_m[c],
                             sd, diag, a, table, coeffs)
        if beta > 0.0:
            X *= decay


def _split_apply(X, rows, z, ei, ej, size, mij, sd, diag, a, table, coeffs):
    i = ei[..., :size]
    j = ej[..., :size]
    tau = sd * z[:, :size]
    xi = X[rows, i]
    xj = X[rows, j]
    if diag:
        th = a * tau
        cs = np.cos(th)
        sn = np.sin(th)
        X[rows, i] = cs * xi - sn * xj
        X[rows, j] = sn * xi + cs * xj
        return
    gi = np.einsum("bmq,q->bm", X[rows[..., None], table[i]], coeffs)
    gj = np.einsum("bmq,q->bm", X[rows[..., None], table[j]], coeffs)
    hi = gi - a * xi - mij * xj
    hj = gj - mij * xi - a * xj
    w2 = a * a - mij * mij
    w = np.sqrt(w2)
    si = (-a * hi + mij * hj) / w2
    sj = (mij * hi - a * hj) / w2
    yi = xi - si
    yj = xj - sj
    cs = np.cos(w * tau)
    sn = np.sin(w * tau) / w
    X[rows, i] = si + cs * yi - sn * (mij * yi + a * yj)
    X[rows, j] = sj + cs * yj + sn * (a * yi + mij * yj)


def _noise_np(seed, trajs, step, n, ndim, dt):
    return math.sqrt(dt) * normals_np(seed, trajs, step, STREAM_NOISE, n * ndim).reshape(-1, n, ndim)


def em_np(X, trajs, seed, step0, n_steps, dt, beta, model):
    n, ndim = model.n_sites, model.dim
    for s in range(n_steps):
        dW = _noise_np(seed, trajs, step0 + s, n, ndim, dt)
        X += (model.drift(X) - beta * X) * dt + model.diffusion(X, dW)


def heun_np(X, trajs, seed, step0, n_steps, dt, beta, model):
    n, ndim = model.n_sites, model.dim
    half = math.exp(-0.5 * beta * dt)
    for s in range(n_steps):
        dW = _noise_np(seed, trajs, step0 + s, n, ndim, dt)
        if beta > 0.0:
            X *= half
        d1 = model.diffusion(X, dW)
        d2 = model.diffusion(X + d1, dW)
        X += 0.5 * (d1 + d2)
        if beta > 0.0:
            X *= half
