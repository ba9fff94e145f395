"""Numba-jitted twins of the kernels in ``kernels_numpy``.

Same math, same gate convention; elementwise work is fused into explicit
loops and matmuls go through np.dot (BLAS).  Importing this module requires
numba; ``backend`` handles the fallback.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid_scalar(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    ex = np.exp(x)
    return ex / (1.0 + ex)


@njit(cache=True)
def gru_forward(xz, xr, xc, uz, ur, uc, h0):
    T, B, S = xz.shape
    states = np.empty((T, B, S))
    zs = np.empty((T, B, S))
    rs = np.empty((T, B, S))
    cs = np.empty((T, B, S))
    h = h0.copy()
    rh = np.empty((B, S))
    for t in range(T):
        rec_z = np.dot(h, uz)
        rec_r = np.dot(h, ur)
        for i in range(B):
            for j in range(S):
                z = _sigmoid_scalar(xz[t, i, j] + rec_z[i, j])
                r = _sigmoid_scalar(xr[t, i, j] + rec_r[i, j])
                zs[t, i, j] = z
                rs[t, i, j] = r
                rh[i, j] = r * h[i, j]
        rec_c = np.dot(rh, uc)
        for i in range(B):
            for j in range(S):
                c = np.tanh(xc[t, i, j] + rec_c[i, j])
                cs[t, i, j] = c
                h[i, j] = (1.0 - zs[t, i, j]) * h[i, j] + zs[t, i, j] * c
                states[t, i, j] = h[i, j]
    return states, zs, rs, cs


@njit(cache=True)
def gru_backward(d_states, states, zs, rs, cs, uz, ur, uc, h0):
    T, B, S = d_states.shape
    dxz = np.zeros((T, B, S))
    dxr = np.zeros((T, B, S))
    dxc = np.zeros((T, B, S))
    duz = np.zeros((S, S))
    dur = np.zeros((S, S))
    duc = np.zeros((S, S))
    dh = np.zeros((B, S))
    daz = np.empty((B, S))
    dar = np.empty((B, S))
    dac = np.empty((B, S))
    rh = np.empty((B, S))
    for t in range(T - 1, -1, -1):
        h_prev = states[t - 1] if t > 0 else h0
        for i in range(B):
            for j in range(S):
                z = zs[t, i, j]
                c = cs[t, i, j]
                hp = h_prev[i, j]
                dh_t = dh[i, j] + d_states[t, i, j]
                dz = dh_t * (c - hp)
                dc = dh_t * z
                dh[i, j] = dh_t * (1.0 - z)
                dac[i, j] = dc * (1.0 - c * c)
                daz[i, j] = dz * z * (1.0 - z)
                rh[i, j] = rs[t, i, j] * hp
        duc += np.dot(rh.T, dac)
        drh = np.dot(dac, uc.T)
        for i in range(B):
            for j in range(S):
                r = rs[t, i, j]
                hp = h_prev[i, j]
                dr = drh[i, j] * hp
                dh[i, j] += drh[i, j] * r
                dar[i, j] = dr * r * (1.0 - r)
                dxz[t, i, j] = daz[i, j]
                dxr[t, i, j] = dar[i, j]
                dxc[t, i, j] = dac[i, j]
        duz += np.dot(h_prev.T, daz)
        dur += np.dot(h_prev.T, dar)
        dh += np.dot(daz, uz.T)
        dh += np.dot(dar, ur.T)
    return dxz, dxr, dxc, duz, dur, duc, dh


@njit(cache=True)
def scatter_add(out, idx, rows):
    n, d = rows.shape
    for i in range(n):
        k = idx[i]
        for j in range(d):
            out[k, j] += rows[i, j]


@njit(cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    n = p.shape[0]
    for i in range(n):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
