"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# relative error uses the finite-difference value as reference, floored so
# that coordinates with near-zero true gradient are judged on absolute noise
DENOM_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_block: str
    worst_coord: int
    per_block: dict[str, float]

    def __float__(self) -> float:
        return self.max_rel_error


def finite_diff_check(
    loss_fn: Callable[[dict[str, np.ndarray]], float],
    params: dict[str, np.ndarray],
    analytic_grads: dict[str, np.ndarray],
    epsilon: float = 1e-5,
    max_coords_per_block: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    Perturbs every coordinate of every block (or a random subset of
    ``max_coords_per_block`` per block) by +/- epsilon and evaluates
    (f(x+e) - f(x-e)) / 2e.  Relative error per coordinate is
    |analytic - fd| / max(|fd|, floor).  Parameters are restored exactly.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    worst_block = ""
    worst_coord = -1
    per_block: dict[str, float] = {}
    for name in sorted(params):
        p = params[name]
        flat = p.reshape(-1)
        g_flat = analytic_grads[name].reshape(-1)
        n = flat.size
        if max_coords_per_block is not None and n > max_coords_per_block:
            coords = rng.choice(n, size=max_coords_per_block, replace=False)
        else:
            coords = np.arange(n)
        block_worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_fn(params)
            flat[i] = orig - epsilon
            f_minus = loss_fn(params)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            rel = abs(g_flat[i] - fd) / max(abs(fd), DENOM_FLOOR)
            if rel > block_worst:
                block_worst = rel
            if rel > worst:
                worst = rel
                worst_block = name
                worst_coord = int(i)
        per_block[name] = block_worst
    return GradCheckResult(worst, worst_block, worst_coord, per_block)
