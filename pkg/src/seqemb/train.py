"""Self-supervised training loops: batching, early stopping, logging."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from seqemb.dataio import EncodedSequence
from seqemb.model import (
    LossBreakdown,
    LossConfig,
    ModelDims,
    PaddedBatch,
    batch_loss_and_grads,
    check_params_match,
    init_params,
    pad_sequences,
)
from seqemb.nn.adam import AdamState, adam_step


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError(f"invalid training configuration: {self}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")


@dataclass
class EpochLog:
    epoch: int
    train_total: float
    train_next: float
    train_past: float
    val_total: float
    seconds: float


def _make_batches(
    sequences: Sequence[EncodedSequence], batch_size: int
) -> list[PaddedBatch]:
    """Group sequences of similar length to keep padding waste low.

    Membership is fixed (sorted by length, then original position); only the
    order batches are visited in is shuffled per epoch.
    """
    order = sorted(range(len(sequences)), key=lambda i: (len(sequences[i]), i))
    batches = []
    for lo in range(0, len(order), batch_size):
        group = [sequences[i] for i in order[lo : lo + batch_size]]
        batches.append(pad_sequences(group))
    return batches


def evaluate_loss(
    params: dict[str, np.ndarray],
    batches: Sequence[PaddedBatch],
    dims: ModelDims,
    config: LossConfig,
) -> LossBreakdown:
    """Mean loss over batches, weighted by their sequence counts."""
    n = 0
    next_sum = past_sum = total_sum = 0.0
    for batch in batches:
        br, _ = batch_loss_and_grads(params, batch, dims, config, want_grads=False)
        b = batch.n_sequences
        next_sum += br.next_event * b
        past_sum += br.past_recon * b
        total_sum += br.total * b
        n += b
    return LossBreakdown(next_sum / n, past_sum / n, total_sum / n)


def _train(
    params: dict[str, np.ndarray],
    sequences: Sequence[EncodedSequence],
    dims: ModelDims,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], list[EpochLog]]:
    if not sequences:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x5EED]))

    n_val = int(round(train_cfg.val_fraction * len(sequences)))
    perm = rng.permutation(len(sequences))
    val_idx = set(perm[:n_val].tolist())
    train_seqs = [sequences[i] for i in range(len(sequences)) if i not in val_idx]
    val_seqs = [sequences[i] for i in sorted(val_idx)]
    if not train_seqs:
        raise ValueError("validation split consumed every sequence")

    train_batches = _make_batches(train_seqs, train_cfg.batch_size)
    val_batches = _make_batches(val_seqs, train_cfg.batch_size) if val_seqs else []

    adam = AdamState(learning_rate=train_cfg.learning_rate)
    log: list[EpochLog] = []

    t0 = time.perf_counter()
    initial = evaluate_loss(params, train_batches, dims, loss_cfg)
    initial_val = (
        evaluate_loss(params, val_batches, dims, loss_cfg).total if val_batches else initial.total
    )
    log.append(
        EpochLog(0, initial.total, initial.next_event, initial.past_recon,
                 initial_val, time.perf_counter() - t0)
    )

    best_val = initial_val
    best_params = copy.deepcopy(params)
    bad_epochs = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_batches))
        next_sum = past_sum = total_sum = 0.0
        n_seen = 0
        for bi in order:
            batch = train_batches[bi]
            br, grads = batch_loss_and_grads(params, batch, dims, loss_cfg)
            if not np.isfinite(br.total):
                raise TrainingDiverged(
                    f"non-finite loss {br.total} at epoch {epoch}, batch {bi} "
                    f"(next={br.next_event}, past={br.past_recon})"
                )
            adam_step(params, grads, adam)
            b = batch.n_sequences
            next_sum += br.next_event * b
            past_sum += br.past_recon * b
            total_sum += br.total * b
            n_seen += b
        val_total = (
            evaluate_loss(params, val_batches, dims, loss_cfg).total
            if val_batches
            else total_sum / n_seen
        )
        log.append(
            EpochLog(epoch, total_sum / n_seen, next_sum / n_seen, past_sum / n_seen,
                     val_total, time.perf_counter() - t0)
        )
        if val_total < best_val:
            best_val = val_total
            best_params = copy.deepcopy(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > train_cfg.patience:
                break

    for name in params:
        params[name][...] = best_params[name]
    return params, log


def pretrain(
    sequences: Sequence[EncodedSequence],
    dims: ModelDims,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], list[EpochLog]]:
    """Train a fresh model; deterministic given the config seed.

    A seeded slice of the entities is held out for early stopping; the
    parameters returned are the best-validation snapshot.
    """
    params = init_params(dims, seed=train_cfg.seed)
    return _train(params, sequences, dims, loss_cfg, train_cfg)


def finetune(
    params: dict[str, np.ndarray],
    sequences: Sequence[EncodedSequence],
    dims: ModelDims,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], list[EpochLog]]:
    """Continue self-supervised training from existing parameters.

    Runs the same loop as ``pretrain``; with max_epochs 0 the parameters come
    back unchanged.  Raises if the parameter shapes do not match ``dims``
    (e.g. a categorical cardinality differs from the pretraining data).
    """
    check_params_match(params, dims)
    params = {name: arr.copy() for name, arr in params.items()}
    if train_cfg.max_epochs == 0:
        return params, []
    return _train(params, sequences, dims, loss_cfg, train_cfg)


def write_log_csv(log: Sequence[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_total,train_next,train_past,val_total,seconds\n")
        for row in log:
            fh.write(
                f"{row.epoch},{row.train_total:.12g},{row.train_next:.12g},"
                f"{row.train_past:.12g},{row.val_total:.12g},{row.seconds:.3f}\n"
            )
