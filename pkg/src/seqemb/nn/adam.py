"""Adam optimizer over named parameter blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from seqemb.nn import backend


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters.

    Moments are created lazily on the first step so the state can be built
    before the parameter dict is final.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Apply one bias-corrected Adam update in place.

    Raises on any non-finite gradient, naming the offending block; blocks are
    visited in sorted-name order so replaying a gradient stream is bit-for-bit
    reproducible.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name in sorted(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        backend.adam_update(
            p.reshape(-1),
            np.ascontiguousarray(g.reshape(-1)),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon,
            bc1,
            bc2,
        )
    return params, state
