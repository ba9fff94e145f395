"""Pure-numpy reference implementations of the hot kernels.

Semantics here are the contract; the numba twins in ``kernels_numba`` must
match these within floating-point noise.  Gate order is update (z), reset (r),
candidate (c); the state update is h' = (1-z)*h + z*c.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form keeps exp() off large positive arguments; the numba twin
    # uses the same branches so both backends agree to the last few ulps
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_forward(xz, xr, xc, uz, ur, uc, h0):
    """Run a GRU over T steps for a batch.

    xz/xr/xc: (T, B, S) input-side gate pre-activations (input projection plus
    bias, computed by the caller in one matmul).  uz/ur/uc: (S, S) recurrent
    weights.  h0: (B, S) initial state.

    Returns (states, z, r, c), each (T, B, S); states[t] is the state after
    consuming step t.
    """
    T, B, S = xz.shape
    states = np.empty((T, B, S))
    zs = np.empty((T, B, S))
    rs = np.empty((T, B, S))
    cs = np.empty((T, B, S))
    h = h0
    for t in range(T):
        z = _sigmoid(xz[t] + h @ uz)
        r = _sigmoid(xr[t] + h @ ur)
        c = np.tanh(xc[t] + (r * h) @ uc)
        h = (1.0 - z) * h + z * c
        zs[t] = z
        rs[t] = r
        cs[t] = c
        states[t] = h
    return states, zs, rs, cs


def gru_backward(d_states, states, zs, rs, cs, uz, ur, uc, h0):
    """Backpropagate through ``gru_forward``.

    d_states: (T, B, S) upstream gradient on each step's output state.
    Returns (dxz, dxr, dxc, duz, dur, duc, dh0).
    """
    T, B, S = d_states.shape
    dxz = np.zeros((T, B, S))
    dxr = np.zeros((T, B, S))
    dxc = np.zeros((T, B, S))
    duz = np.zeros((S, S))
    dur = np.zeros((S, S))
    duc = np.zeros((S, S))
    dh = np.zeros((B, S))
    for t in range(T - 1, -1, -1):
        h_prev = states[t - 1] if t > 0 else h0
        z = zs[t]
        r = rs[t]
        c = cs[t]
        dh = dh + d_states[t]
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        dac = dc * (1.0 - c * c)
        duc += (r * h_prev).T @ dac
        drh = dac @ uc.T
        dr = drh * h_prev
        dh_prev += drh * r

        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        duz += h_prev.T @ daz
        dur += h_prev.T @ dar
        dh_prev += daz @ uz.T + dar @ ur.T

        dxz[t] = daz
        dxr[t] = dar
        dxc[t] = dac
        dh = dh_prev
    return dxz, dxr, dxc, duz, dur, duc, dh


def scatter_add(out, idx, rows):
    """out[idx[i], :] += rows[i, :] with repeated indices accumulating."""
    np.add.at(out, idx, rows)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One fused Adam update on flat views, in place.

    bc1/bc2 are the bias-correction denominators 1 - beta^t for the current
    step.  Epsilon sits outside the square root.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
