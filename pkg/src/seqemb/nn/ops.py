"""Elementary layer operations and losses.

Everything is float64 and hand-differentiable; the backward passes live with
the model code that orchestrates them, except for the small reusable pieces
here.  Weight convention is row-activations: y = x @ W + b with W shaped
(n_in, n_out).
"""

from __future__ import annotations

import numpy as np

EPS_CLAMP = 1e-12  # guards log() in cross-entropy against exact zeros

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return relu(x)
    if activation == "sigmoid":
        return sigmoid(x)
    if activation == "tanh":
        return np.tanh(x)
    if activation == "linear":
        return x
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def dense_apply(weight: np.ndarray, bias: np.ndarray, x: np.ndarray, activation: str = "linear") -> np.ndarray:
    """activation(x @ W + b); x may be a vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"input width {x.shape[-1]} does not match weight rows {weight.shape[0]}"
        )
    return apply_activation(x @ weight + bias, activation)


def gru_step(
    wz: np.ndarray,
    wr: np.ndarray,
    wc: np.ndarray,
    uz: np.ndarray,
    ur: np.ndarray,
    uc: np.ndarray,
    bz: np.ndarray,
    br: np.ndarray,
    bc: np.ndarray,
    x: np.ndarray,
    state: np.ndarray,
) -> np.ndarray:
    """One GRU cell step.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    c = tanh(x Wc + (r*h) Uc + bc), h' = (1-z)*h + z*c.
    """
    x = np.asarray(x, dtype=np.float64)
    state = np.asarray(state, dtype=np.float64)
    if x.shape[-1] != wz.shape[0] or state.shape[-1] != uz.shape[0]:
        raise ValueError(
            f"gru_step shape mismatch: input {x.shape}, state {state.shape}, "
            f"Wz {wz.shape}, Uz {uz.shape}"
        )
    z = sigmoid(x @ wz + state @ uz + bz)
    r = sigmoid(x @ wr + state @ ur + br)
    c = np.tanh(x @ wc + (r * state) @ uc + bc)
    return (1.0 - z) * state + z * c


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, target_index: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target_index < probs.shape[-1]:
        raise IndexError(
            f"target index {target_index} out of range for {probs.shape[-1]} classes"
        )
    return float(-np.log(probs[target_index] + EPS_CLAMP))


def mse(prediction: float, target: float) -> float:
    d = float(prediction) - float(target)
    return d * d
