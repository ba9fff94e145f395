"""Recurrent sequence-embedding model and its two generative objectives.

The encoder maps each event, given everything before it, to a vector in
(0, 1)^d: per-feature inputs are concatenated (z-scored numerics plus learned
category embeddings), passed through a ReLU MLP, a GRU, and a sigmoid
projection.  Two decoder MLPs read an event's embedding: one predicts the
features of the next event, the other reconstructs a past event given the
elapsed time between them.  Reconstruction error is squared error on numeric
slices and cross-entropy on softmaxed categorical slices; past terms are
down-weighted by exp(-dt/decay_days).

All gradients are hand-derived; ``tests`` verify them against central finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from seqemb.dataio import SECONDS_PER_DAY, TIME_GAP_NAME, EncodedSequence, NormStats
from seqemb.nn import backend
from seqemb.nn.ops import EPS_CLAMP, relu, sigmoid
from seqemb.schema import EventSchema

DECODER_CHUNK = 32768  # pair rows decoded per block; bounds transient memory


@dataclass(frozen=True)
class EncoderConfig:
    cat_embed_dim: int = 32
    mlp_hidden: tuple[int, ...] = (512, 512)
    gru_size: int = 512
    embed_size: int = 512
    decoder_hidden: tuple[int, ...] = (512, 512)

    def __post_init__(self) -> None:
        sizes = (self.cat_embed_dim, self.gru_size, self.embed_size) + tuple(
            self.mlp_hidden
        ) + tuple(self.decoder_hidden)
        if any(s <= 0 for s in sizes):
            raise ValueError(f"all architecture sizes must be positive: {self}")


@dataclass(frozen=True)
class LossConfig:
    """Weights and horizon of the combined objective.

    ``past_weight`` mixes the two terms: total = (1 - w) * next + w * past.
    ``decay_days`` is the e-folding time of the past-term weight and also the
    scale on the elapsed-time input.  ``max_lookback`` caps how many past
    events each position reconstructs.  With ``normalize_by_length`` each
    sequence's summed loss is divided by its length before batch averaging so
    long histories do not dominate; switch it off for the literal per-position
    sum.
    """

    past_weight: float = 0.1
    decay_days: float = 60.0
    max_lookback: int = 16
    normalize_by_length: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.past_weight <= 1.0:
            raise ValueError(f"past_weight must lie in [0, 1], got {self.past_weight}")
        if self.decay_days <= 0:
            raise ValueError(f"decay_days must be positive, got {self.decay_days}")
        if self.max_lookback < 1:
            raise ValueError(f"max_lookback must be >= 1, got {self.max_lookback}")


@dataclass(frozen=True)
class ModelDims:
    """Complete architecture description derived from schema, stats, config."""

    numeric_names: tuple[str, ...]  # schema numerics then the time-gap input
    cat_names: tuple[str, ...]
    cardinalities: tuple[int, ...]
    embed_dims: tuple[int, ...]
    mlp_hidden: tuple[int, ...]
    gru_size: int
    embed_size: int
    decoder_hidden: tuple[int, ...]

    @property
    def n_numeric(self) -> int:
        return len(self.numeric_names)

    @property
    def n_inputs(self) -> int:
        return self.n_numeric + sum(self.embed_dims)

    @property
    def n_outputs(self) -> int:
        # decoders emit one scalar per numeric input (time gap included) and
        # one logit block per categorical feature
        return self.n_numeric + sum(self.cardinalities)

    @property
    def num_offsets(self) -> tuple[int, ...]:
        return tuple(range(self.n_numeric))

    @property
    def cat_slices(self) -> tuple[tuple[int, int], ...]:
        slices = []
        off = self.n_numeric
        for c in self.cardinalities:
            slices.append((off, off + c))
            off += c
        return tuple(slices)

    def to_dict(self) -> dict:
        return {
            "numeric_names": list(self.numeric_names),
            "cat_names": list(self.cat_names),
            "cardinalities": list(self.cardinalities),
            "embed_dims": list(self.embed_dims),
            "mlp_hidden": list(self.mlp_hidden),
            "gru_size": self.gru_size,
            "embed_size": self.embed_size,
            "decoder_hidden": list(self.decoder_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        return cls(
            numeric_names=tuple(d["numeric_names"]),
            cat_names=tuple(d["cat_names"]),
            cardinalities=tuple(d["cardinalities"]),
            embed_dims=tuple(d["embed_dims"]),
            mlp_hidden=tuple(d["mlp_hidden"]),
            gru_size=int(d["gru_size"]),
            embed_size=int(d["embed_size"]),
            decoder_hidden=tuple(d["decoder_hidden"]),
        )


def build_dims(schema: EventSchema, stats: NormStats, config: EncoderConfig) -> ModelDims:
    numeric_names = tuple(f.name for f in schema.numeric_features) + (TIME_GAP_NAME,)
    cat_names = tuple(f.name for f in schema.categorical_features)
    cardinalities = tuple(stats.cardinality(name) for name in cat_names)
    return ModelDims(
        numeric_names=numeric_names,
        cat_names=cat_names,
        cardinalities=cardinalities,
        embed_dims=tuple(config.cat_embed_dim for _ in cat_names),
        mlp_hidden=tuple(config.mlp_hidden),
        gru_size=config.gru_size,
        embed_size=config.embed_size,
        decoder_hidden=tuple(config.decoder_hidden),
    )


def _xavier(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


def init_params(dims: ModelDims, seed: int) -> dict[str, np.ndarray]:
    """Create all parameter blocks in a fixed, seed-deterministic order."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, c, e in zip(dims.cat_names, dims.cardinalities, dims.embed_dims):
        params[f"embed/{name}"] = rng.normal(0.0, 0.02, size=(c, e))
    n_in = dims.n_inputs
    for i, width in enumerate(dims.mlp_hidden):
        params[f"mlp/{i}/W"] = _xavier(rng, n_in, width)
        params[f"mlp/{i}/b"] = np.zeros(width)
        n_in = width
    s = dims.gru_size
    for gate in ("z", "r", "c"):
        params[f"gru/W{gate}"] = _xavier(rng, n_in, s)
    for gate in ("z", "r", "c"):
        params[f"gru/U{gate}"] = _xavier(rng, s, s)
    for gate in ("z", "r", "c"):
        params[f"gru/b{gate}"] = np.zeros(s)
    params["proj/W"] = _xavier(rng, s, dims.embed_size)
    params["proj/b"] = np.zeros(dims.embed_size)
    for prefix, first in (("dec_next", dims.embed_size), ("dec_past", dims.embed_size + 1)):
        n_in = first
        for i, width in enumerate(dims.decoder_hidden):
            params[f"{prefix}/{i}/W"] = _xavier(rng, n_in, width)
            params[f"{prefix}/{i}/b"] = np.zeros(width)
            n_in = width
        last = len(dims.decoder_hidden)
        params[f"{prefix}/{last}/W"] = _xavier(rng, n_in, dims.n_outputs)
        params[f"{prefix}/{last}/b"] = np.zeros(dims.n_outputs)
    return params


def check_params_match(params: dict[str, np.ndarray], dims: ModelDims) -> None:
    """Verify parameter shapes against an architecture description."""
    expected_keys = set(init_params(dims, seed=0))
    got = set(params)
    if expected_keys != got:
        missing = sorted(expected_keys - got)
        extra = sorted(got - expected_keys)
        raise ValueError(f"parameter blocks mismatch: missing {missing}, extra {extra}")
    for name, c, e in zip(dims.cat_names, dims.cardinalities, dims.embed_dims):
        shape = params[f"embed/{name}"].shape
        if shape != (c, e):
            raise ValueError(
                f"embedding table {name!r} has shape {shape}, expected {(c, e)} "
                "(cardinality mismatch between parameters and data)"
            )
    last = len(dims.decoder_hidden)
    for prefix in ("dec_next", "dec_past"):
        cols = params[f"{prefix}/{last}/W"].shape[1]
        if cols != dims.n_outputs:
            raise ValueError(
                f"{prefix} output width {cols} does not match expected {dims.n_outputs}"
            )


# ---------------------------------------------------------------------------
# batching


@dataclass
class PaddedBatch:
    numerics: np.ndarray  # (B, T, n_numeric)
    categories: np.ndarray  # (B, T, n_cat) int64
    ts_days: np.ndarray  # (B, T) timestamps in days
    lengths: np.ndarray  # (B,) int64

    @property
    def n_sequences(self) -> int:
        return self.numerics.shape[0]

    @property
    def max_len(self) -> int:
        return self.numerics.shape[1]


def pad_sequences(seqs: Sequence[EncodedSequence]) -> PaddedBatch:
    if not seqs:
        raise ValueError("cannot build a batch from zero sequences")
    b = len(seqs)
    t = max(len(s) for s in seqs)
    n_num = seqs[0].numerics.shape[1]
    n_cat = seqs[0].categories.shape[1]
    numerics = np.zeros((b, t, n_num))
    categories = np.zeros((b, t, n_cat), dtype=np.int64)
    ts_days = np.zeros((b, t))
    lengths = np.zeros(b, dtype=np.int64)
    for i, s in enumerate(seqs):
        n = len(s)
        numerics[i, :n] = s.numerics
        categories[i, :n] = s.categories
        ts_days[i, :n] = s.timestamps / SECONDS_PER_DAY
        lengths[i] = n
    return PaddedBatch(numerics, categories, ts_days, lengths)


# ---------------------------------------------------------------------------
# encoder


@dataclass
class EncoderCache:
    mlp_acts: list[np.ndarray]  # [x_in_flat, h1_flat, ...] each (B*T, width)
    states_tbs: np.ndarray  # (T, B, S)
    gate_z: np.ndarray
    gate_r: np.ndarray
    gate_c: np.ndarray
    states_flat: np.ndarray  # (B*T, S)
    e_flat: np.ndarray  # (B*T, d)


def encode_batch(
    params: dict[str, np.ndarray], batch: PaddedBatch, dims: ModelDims
) -> tuple[np.ndarray, EncoderCache]:
    """Embed every (padded) position of a batch; returns (B, T, d) and cache.

    Positions at or beyond a sequence's length produce well-defined garbage
    that downstream loss terms never reference.
    """
    b, t = batch.n_sequences, batch.max_len
    parts = [batch.numerics]
    for j, name in enumerate(dims.cat_names):
        parts.append(params[f"embed/{name}"][batch.categories[:, :, j]])
    x_flat = np.concatenate(parts, axis=2).reshape(b * t, dims.n_inputs)

    acts = [x_flat]
    h = x_flat
    for i in range(len(dims.mlp_hidden)):
        h = relu(h @ params[f"mlp/{i}/W"] + params[f"mlp/{i}/b"])
        acts.append(h)

    s = dims.gru_size
    gate_inputs = []
    for gate in ("z", "r", "c"):
        pre = h @ params[f"gru/W{gate}"] + params[f"gru/b{gate}"]
        gate_inputs.append(
            np.ascontiguousarray(pre.reshape(b, t, s).transpose(1, 0, 2))
        )
    h0 = np.zeros((b, s))
    states_tbs, gz, gr, gc = backend.gru_forward(
        gate_inputs[0], gate_inputs[1], gate_inputs[2],
        params["gru/Uz"], params["gru/Ur"], params["gru/Uc"], h0,
    )
    states_flat = np.ascontiguousarray(states_tbs.transpose(1, 0, 2)).reshape(b * t, s)
    e_flat = sigmoid(states_flat @ params["proj/W"] + params["proj/b"])
    cache = EncoderCache(acts, states_tbs, gz, gr, gc, states_flat, e_flat)
    return e_flat.reshape(b, t, dims.embed_size), cache


def encoder_backward(
    params: dict[str, np.ndarray],
    batch: PaddedBatch,
    cache: EncoderCache,
    d_e_flat: np.ndarray,
    dims: ModelDims,
    grads: dict[str, np.ndarray],
) -> None:
    """Backpropagate d(loss)/d(embeddings) through projection, GRU, MLP and
    embedding tables, accumulating into ``grads``."""
    b, t = batch.n_sequences, batch.max_len
    s = dims.gru_size

    e = cache.e_flat
    dp = d_e_flat * e * (1.0 - e)
    grads["proj/W"] += cache.states_flat.T @ dp
    grads["proj/b"] += dp.sum(axis=0)
    ds_flat = dp @ params["proj/W"].T
    ds_tbs = np.ascontiguousarray(ds_flat.reshape(b, t, s).transpose(1, 0, 2))

    h0 = np.zeros((b, s))
    dxz, dxr, dxc, duz, dur, duc, _ = backend.gru_backward(
        ds_tbs, cache.states_tbs, cache.gate_z, cache.gate_r, cache.gate_c,
        params["gru/Uz"], params["gru/Ur"], params["gru/Uc"], h0,
    )
    grads["gru/Uz"] += duz
    grads["gru/Ur"] += dur
    grads["gru/Uc"] += duc

    mlp_out = cache.mlp_acts[-1]
    dh = np.zeros_like(mlp_out)
    for gate, dx in (("z", dxz), ("r", dxr), ("c", dxc)):
        dx_flat = np.ascontiguousarray(dx.transpose(1, 0, 2)).reshape(b * t, s)
        grads[f"gru/W{gate}"] += mlp_out.T @ dx_flat
        grads[f"gru/b{gate}"] += dx_flat.sum(axis=0)
        dh += dx_flat @ params[f"gru/W{gate}"].T

    for i in reversed(range(len(dims.mlp_hidden))):
        dh = dh * (cache.mlp_acts[i + 1] > 0)
        grads[f"mlp/{i}/W"] += cache.mlp_acts[i].T @ dh
        grads[f"mlp/{i}/b"] += dh.sum(axis=0)
        dh = dh @ params[f"mlp/{i}/W"].T

    off = dims.n_numeric
    cat_flat = batch.categories.reshape(b * t, -1)
    for j, name in enumerate(dims.cat_names):
        e_dim = dims.embed_dims[j]
        rows = np.ascontiguousarray(dh[:, off : off + e_dim])
        backend.scatter_add(grads[f"embed/{name}"], cat_flat[:, j], rows)
        off += e_dim


def encode_sequence(
    params: dict[str, np.ndarray], seq: EncodedSequence, dims: ModelDims
) -> np.ndarray:
    """Embed one sequence with a strict per-event loop.

    Every position runs the identical instruction stream regardless of how
    many later events exist, so encoding any prefix reproduces the prefix of
    the full encoding bit for bit.
    """
    n = len(seq)
    if n == 0:
        raise ValueError("cannot encode an empty sequence")
    if seq.categories.shape[1] != len(dims.cat_names) or seq.numerics.shape[1] != dims.n_numeric:
        raise ValueError(
            f"sequence width ({seq.numerics.shape[1]} numeric, "
            f"{seq.categories.shape[1]} categorical) does not match model dims"
        )
    h = np.zeros(dims.gru_size)
    out = np.empty((n, dims.embed_size))
    for t in range(n):
        pieces = [seq.numerics[t]]
        for j, name in enumerate(dims.cat_names):
            pieces.append(params[f"embed/{name}"][seq.categories[t, j]])
        x = np.concatenate(pieces)
        for i in range(len(dims.mlp_hidden)):
            x = relu(x @ params[f"mlp/{i}/W"] + params[f"mlp/{i}/b"])
        z = sigmoid(x @ params["gru/Wz"] + h @ params["gru/Uz"] + params["gru/bz"])
        r = sigmoid(x @ params["gru/Wr"] + h @ params["gru/Ur"] + params["gru/br"])
        c = np.tanh(x @ params["gru/Wc"] + (r * h) @ params["gru/Uc"] + params["gru/bc"])
        h = (1.0 - z) * h + z * c
        out[t] = sigmoid(h @ params["proj/W"] + params["proj/b"])
    return out


# ---------------------------------------------------------------------------
# decoders


def _decoder_forward(
    params: dict[str, np.ndarray], prefix: str, x: np.ndarray, n_hidden: int
) -> tuple[np.ndarray, list[np.ndarray]]:
    acts = [x]
    h = x
    for i in range(n_hidden):
        h = relu(h @ params[f"{prefix}/{i}/W"] + params[f"{prefix}/{i}/b"])
        acts.append(h)
    out = h @ params[f"{prefix}/{n_hidden}/W"] + params[f"{prefix}/{n_hidden}/b"]
    return out, acts


def _decoder_backward(
    params: dict[str, np.ndarray],
    prefix: str,
    acts: list[np.ndarray],
    d_out: np.ndarray,
    n_hidden: int,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    grads[f"{prefix}/{n_hidden}/W"] += acts[-1].T @ d_out
    grads[f"{prefix}/{n_hidden}/b"] += d_out.sum(axis=0)
    d = d_out @ params[f"{prefix}/{n_hidden}/W"].T
    for i in reversed(range(n_hidden)):
        d = d * (acts[i + 1] > 0)
        grads[f"{prefix}/{i}/W"] += acts[i].T @ d
        grads[f"{prefix}/{i}/b"] += d.sum(axis=0)
        d = d @ params[f"{prefix}/{i}/W"].T
    return d


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


@dataclass
class EventPrediction:
    """Decoder output split per feature: scalars for numerics, probability
    vectors for categoricals (softmaxed, each summing to one)."""

    numeric: dict[str, float]
    categorical: dict[str, np.ndarray]


def _split_prediction(out: np.ndarray, dims: ModelDims) -> EventPrediction:
    numeric = {
        name: float(out[dims.num_offsets[j]]) for j, name in enumerate(dims.numeric_names)
    }
    categorical = {}
    for j, name in enumerate(dims.cat_names):
        s, e = dims.cat_slices[j]
        categorical[name] = _softmax_rows(out[s:e][None, :])[0]
    return EventPrediction(numeric, categorical)


def predict_next(
    params: dict[str, np.ndarray], embedding: np.ndarray, dims: ModelDims
) -> EventPrediction:
    out, _ = _decoder_forward(params, "dec_next", embedding[None, :], len(dims.decoder_hidden))
    return _split_prediction(out[0], dims)


def predict_past(
    params: dict[str, np.ndarray],
    embedding: np.ndarray,
    delta_days: float,
    decay_days: float,
    dims: ModelDims,
) -> EventPrediction:
    x = np.concatenate([embedding, [delta_days / decay_days]])[None, :]
    out, _ = _decoder_forward(params, "dec_past", x, len(dims.decoder_hidden))
    return _split_prediction(out[0], dims)


# ---------------------------------------------------------------------------
# losses


@dataclass
class LossBreakdown:
    """Loss components; ``total`` is always (1-w)*next_event + w*past_recon."""

    next_event: float
    past_recon: float
    total: float
    per_feature: dict[str, list[float]] = field(default_factory=dict)
    n_next_terms: int = 0
    n_past_terms: int = 0


def time_decay_weight(delta_days: float, decay_days: float) -> float:
    """exp(-dt/decay): 1 at zero elapsed time, 1/e after one decay length."""
    if delta_days < 0:
        raise ValueError(f"negative time difference {delta_days} violates event order")
    if decay_days <= 0:
        raise ValueError(f"decay length must be positive, got {decay_days}")
    return math.exp(-delta_days / decay_days)


def total_loss(next_value: float, past_value: float, past_weight: float) -> float:
    if not 0.0 <= past_weight <= 1.0:
        raise ValueError(f"past_weight must lie in [0, 1], got {past_weight}")
    return (1.0 - past_weight) * next_value + past_weight * past_value


def _event_term(
    out: np.ndarray,
    numerics: np.ndarray,
    categories: np.ndarray,
    dims: ModelDims,
    per_feature: dict[str, list[float]] | None,
    part: int,
    scale: float = 1.0,
) -> float:
    """Reconstruction loss of a single event from one decoder output row."""
    term = 0.0
    for j, name in enumerate(dims.numeric_names):
        d = float(out[dims.num_offsets[j]]) - float(numerics[j])
        contrib = d * d
        term += contrib
        if per_feature is not None:
            per_feature[name][part] += scale * contrib
    for j, name in enumerate(dims.cat_names):
        s, e = dims.cat_slices[j]
        probs = _softmax_rows(out[s:e][None, :])[0]
        contrib = -math.log(probs[categories[j]] + EPS_CLAMP)
        term += contrib
        if per_feature is not None:
            per_feature[name][part] += scale * contrib
    return term


def _new_per_feature(dims: ModelDims) -> dict[str, list[float]]:
    return {name: [0.0, 0.0] for name in dims.numeric_names + dims.cat_names}


def next_event_loss(
    params: dict[str, np.ndarray],
    embeddings: np.ndarray,
    seq: EncodedSequence,
    dims: ModelDims,
) -> tuple[float, dict[str, list[float]], int]:
    """Sum over positions of the next-event reconstruction loss.

    Position t's embedding predicts event t+1; the final event contributes
    nothing.  Returns (loss, per-feature breakdown, number of scored
    positions); a length-1 sequence scores zero positions.
    """
    n = len(seq)
    per_feature = _new_per_feature(dims)
    if n < 2:
        return 0.0, per_feature, 0
    n_hidden = len(dims.decoder_hidden)
    total = 0.0
    for t in range(n - 1):
        out, _ = _decoder_forward(params, "dec_next", embeddings[t][None, :], n_hidden)
        total += _event_term(out[0], seq.numerics[t + 1], seq.categories[t + 1], dims, per_feature, 0)
    return total, per_feature, n - 1


def past_reconstruction_loss(
    params: dict[str, np.ndarray],
    embeddings: np.ndarray,
    seq: EncodedSequence,
    dims: ModelDims,
    config: LossConfig,
) -> tuple[float, dict[str, list[float]], int]:
    """Time-decayed sum of reconstruction losses of up to ``max_lookback``
    events before each position."""
    n = len(seq)
    per_feature = _new_per_feature(dims)
    n_hidden = len(dims.decoder_hidden)
    ts_days = seq.timestamps / SECONDS_PER_DAY
    total = 0.0
    n_terms = 0
    for t in range(n):
        for k in range(1, min(config.max_lookback, t) + 1):
            delta = ts_days[t] - ts_days[t - k]
            w = time_decay_weight(delta, config.decay_days)
            x = np.concatenate([embeddings[t], [delta / config.decay_days]])[None, :]
            out, _ = _decoder_forward(params, "dec_past", x, n_hidden)
            total += w * _event_term(
                out[0], seq.numerics[t - k], seq.categories[t - k], dims, per_feature, 1, scale=w
            )
            n_terms += 1
    return total, per_feature, n_terms


def sequence_loss(
    params: dict[str, np.ndarray],
    seq: EncodedSequence,
    dims: ModelDims,
    config: LossConfig,
) -> LossBreakdown:
    """Full per-sequence loss through the strict encoder (reference path)."""
    emb = encode_sequence(params, seq, dims)
    nv, pf_next, n_next = next_event_loss(params, emb, seq, dims)
    pv, pf_past, n_past = past_reconstruction_loss(params, emb, seq, dims, config)
    per_feature = _new_per_feature(dims)
    for name in per_feature:
        per_feature[name][0] = pf_next[name][0]
        per_feature[name][1] = pf_past[name][1]
    return LossBreakdown(
        next_event=nv,
        past_recon=pv,
        total=total_loss(nv, pv, config.past_weight),
        per_feature=per_feature,
        n_next_terms=n_next,
        n_past_terms=n_past,
    )


# ---------------------------------------------------------------------------
# batched loss + gradients


@dataclass
class PairSet:
    """Flattened (source position, target event) index pairs for one batch."""

    np_src: np.ndarray
    np_tgt: np.ndarray
    np_w: np.ndarray  # per-term normalization weight (1/T_seq when enabled, /B)
    pr_src: np.ndarray
    pr_tgt: np.ndarray
    pr_omega: np.ndarray
    pr_dt_norm: np.ndarray
    pr_w: np.ndarray


def build_pairs(batch: PaddedBatch, config: LossConfig) -> PairSet:
    b, t = batch.n_sequences, batch.max_len
    lengths = batch.lengths
    t_grid = np.arange(t)[None, :]
    if config.normalize_by_length:
        seq_inv = 1.0 / lengths.astype(np.float64)
    else:
        seq_inv = np.ones(b)
    seq_inv = seq_inv / b

    np_mask = t_grid < (lengths[:, None] - 1)
    bi, ti = np.nonzero(np_mask)
    np_src = bi * t + ti
    np_tgt = np_src + 1
    np_w = seq_inv[bi]

    k_grid = np.arange(1, config.max_lookback + 1)
    t3 = t_grid[:, :, None]
    valid = (t3 >= k_grid[None, None, :]) & (t3 < lengths[:, None, None])
    bb, tt, kk = np.nonzero(valid)
    pr_src = bb * t + tt
    pr_tgt = bb * t + (tt - (kk + 1))
    ts_flat = batch.ts_days.reshape(-1)
    dt = ts_flat[pr_src] - ts_flat[pr_tgt]
    return PairSet(
        np_src=np_src,
        np_tgt=np_tgt,
        np_w=np_w,
        pr_src=pr_src,
        pr_tgt=pr_tgt,
        pr_omega=np.exp(-dt / config.decay_days),
        pr_dt_norm=dt / config.decay_days,
        pr_w=seq_inv[bb],
    )


def _slice_losses_batch(
    out: np.ndarray,
    num_tgt: np.ndarray,
    cat_tgt: np.ndarray,
    term_w: np.ndarray,
    grad_coef: float,
    d_out: np.ndarray | None,
    dims: ModelDims,
    per_feature: dict[str, list[float]],
    part: int,
) -> float:
    """Weighted reconstruction losses over a chunk of decoder rows.

    Accumulates sum(term_w * per-row loss) and, when d_out is given, writes
    grad_coef * term_w * d(row loss)/d(out) into it.
    """
    n = out.shape[0]
    total = 0.0
    gw = grad_coef * term_w
    for j, name in enumerate(dims.numeric_names):
        off = dims.num_offsets[j]
        diff = out[:, off] - num_tgt[:, j]
        contrib = float(term_w @ (diff * diff))
        total += contrib
        per_feature[name][part] += contrib
        if d_out is not None:
            d_out[:, off] = gw * 2.0 * diff
    rows = np.arange(n)
    for j, name in enumerate(dims.cat_names):
        s, e = dims.cat_slices[j]
        probs = _softmax_rows(out[:, s:e])
        tgt = cat_tgt[:, j]
        contrib = float(term_w @ (-np.log(probs[rows, tgt] + EPS_CLAMP)))
        total += contrib
        per_feature[name][part] += contrib
        if d_out is not None:
            dq = probs * gw[:, None]
            dq[rows, tgt] -= gw
            d_out[:, s:e] = dq
    return total


def batch_loss_and_grads(
    params: dict[str, np.ndarray],
    batch: PaddedBatch,
    dims: ModelDims,
    config: LossConfig,
    want_grads: bool = True,
) -> tuple[LossBreakdown, dict[str, np.ndarray] | None]:
    """Mean per-sequence loss over a padded batch, with gradients.

    Padded positions are excluded at pair-construction time, so they
    contribute exactly zero loss and zero gradient.
    """
    e_batch, cache = encode_batch(params, batch, dims)
    b, t = batch.n_sequences, batch.max_len
    e_flat = cache.e_flat
    pairs = build_pairs(batch, config)
    n_hidden = len(dims.decoder_hidden)
    num_flat = batch.numerics.reshape(b * t, -1)
    cat_flat = batch.categories.reshape(b * t, -1)

    grads = {name: np.zeros_like(p) for name, p in params.items()} if want_grads else None
    d_e_flat = np.zeros_like(e_flat) if want_grads else None
    per_feature = _new_per_feature(dims)
    w_next = 1.0 - config.past_weight
    w_past = config.past_weight

    next_total = 0.0
    n1 = pairs.np_src.size
    for lo in range(0, n1, DECODER_CHUNK):
        sl = slice(lo, min(lo + DECODER_CHUNK, n1))
        src = pairs.np_src[sl]
        tgt = pairs.np_tgt[sl]
        out, acts = _decoder_forward(params, "dec_next", e_flat[src], n_hidden)
        d_out = np.empty_like(out) if want_grads else None
        # gap target column: the time gap stored on the *target* event is the
        # gap from the source event, which is exactly what the decoder predicts
        next_total += _slice_losses_batch(
            out, num_flat[tgt], cat_flat[tgt], pairs.np_w[sl], w_next, d_out, dims, per_feature, 0
        )
        if want_grads:
            dx = _decoder_backward(params, "dec_next", acts, d_out, n_hidden, grads)
            backend.scatter_add(d_e_flat, src, np.ascontiguousarray(dx))

    past_total = 0.0
    n2 = pairs.pr_src.size
    for lo in range(0, n2, DECODER_CHUNK):
        sl = slice(lo, min(lo + DECODER_CHUNK, n2))
        src = pairs.pr_src[sl]
        tgt = pairs.pr_tgt[sl]
        term_w = pairs.pr_w[sl] * pairs.pr_omega[sl]
        x = np.concatenate([e_flat[src], pairs.pr_dt_norm[sl][:, None]], axis=1)
        out, acts = _decoder_forward(params, "dec_past", x, n_hidden)
        d_out = np.empty_like(out) if want_grads else None
        past_total += _slice_losses_batch(
            out, num_flat[tgt], cat_flat[tgt], term_w, w_past, d_out, dims, per_feature, 1
        )
        if want_grads:
            dx = _decoder_backward(params, "dec_past", acts, d_out, n_hidden, grads)
            backend.scatter_add(
                d_e_flat, src, np.ascontiguousarray(dx[:, : dims.embed_size])
            )

    if want_grads:
        encoder_backward(params, batch, cache, d_e_flat, dims, grads)

    breakdown = LossBreakdown(
        next_event=next_total,
        past_recon=past_total,
        total=total_loss(next_total, past_total, config.past_weight),
        per_feature=per_feature,
        n_next_terms=int(n1),
        n_past_terms=int(n2),
    )
    return breakdown, grads
