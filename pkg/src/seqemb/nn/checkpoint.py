"""Versioned checkpoint files for parameters, optimizer state and metadata.

Layout (documented, version 1): a numpy ``.npz`` archive holding

    meta            uint8 bytes of a JSON object; always contains
                    ``format_version`` plus caller metadata (architecture,
                    normalization statistics, schema fingerprint, ...)
    param:<name>    one entry per parameter block
    adam_m:<name>,
    adam_v:<name>   optimizer moments when optimizer state is saved

Optimizer scalars (step, learning rate, betas, epsilon) ride inside the meta
JSON under ``"adam"``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from seqemb.nn.adam import AdamState

FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    meta: dict,
    adam: AdamState | None = None,
) -> None:
    payload: dict[str, np.ndarray] = {}
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    for name, arr in params.items():
        payload[f"param:{name}"] = arr
    if adam is not None:
        meta["adam"] = {
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "step": adam.step,
        }
        for name, arr in adam.m.items():
            payload[f"adam_m:{name}"] = arr
        for name, arr in adam.v.items():
            payload[f"adam_v:{name}"] = arr
    payload["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(
    path: str | Path,
) -> tuple[dict[str, np.ndarray], dict, AdamState | None]:
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["meta"]).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"checkpoint {path} has format_version {meta.get('format_version')}, "
                f"expected {FORMAT_VERSION}"
            )
        params = {}
        m = {}
        v = {}
        for key in archive.files:
            if key.startswith("param:"):
                params[key[len("param:") :]] = archive[key]
            elif key.startswith("adam_m:"):
                m[key[len("adam_m:") :]] = archive[key]
            elif key.startswith("adam_v:"):
                v[key[len("adam_v:") :]] = archive[key]
    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = AdamState(
            learning_rate=a["learning_rate"],
            beta1=a["beta1"],
            beta2=a["beta2"],
            epsilon=a["epsilon"],
            step=a["step"],
            m=m,
            v=v,
        )
    return params, meta, adam
