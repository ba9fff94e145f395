"""Kernel backend selection.

The hot loops (GRU recurrence, scatter-adds, fused Adam updates) exist twice:
a pure-numpy reference in ``kernels_numpy`` and numba-jitted twins in
``kernels_numba``.  The ``SEQEMB_BACKEND`` environment variable, read once at
import, picks the active set:

    auto   numba when importable, numpy otherwise (default)
    numba  require the jitted kernels, fail loudly if numba is unusable
    numpy  force the pure-numpy path

``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os
from types import ModuleType

from seqemb.nn import kernels_numpy


def _load_numba_kernels() -> ModuleType:
    from seqemb.nn import kernels_numba

    return kernels_numba


def _resolve(requested: str) -> tuple[str, ModuleType]:
    requested = requested.lower()
    if requested == "numpy":
        return "numpy", kernels_numpy
    if requested == "numba":
        return "numba", _load_numba_kernels()
    if requested == "auto":
        try:
            return "numba", _load_numba_kernels()
        except ImportError:
            return "numpy", kernels_numpy
    raise ValueError(
        f"SEQEMB_BACKEND must be one of auto/numba/numpy, got {requested!r}"
    )


_NAME, _KERNELS = _resolve(os.environ.get("SEQEMB_BACKEND", "auto"))

gru_forward = _KERNELS.gru_forward
gru_backward = _KERNELS.gru_backward
scatter_add = _KERNELS.scatter_add
adam_update = _KERNELS.adam_update


def active_backend() -> str:
    """Name of the kernel set selected at import time."""
    return _NAME


def get_kernels(name: str | None = None) -> ModuleType:
    """Fetch a kernel module by name (for tests and benchmarks)."""
    if name is None:
        return _KERNELS
    return _resolve(name)[1]
