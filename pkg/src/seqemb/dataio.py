"""CSV ingestion, normalization statistics, event encoding and dataset splits."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from seqemb.schema import (
    EntityHistory,
    EventSchema,
    FeatureKind,
    RawEvent,
    SchemaError,
)

SECONDS_PER_DAY = 86400.0
STD_FLOOR = 1e-6
TIME_GAP_NAME = "time_gap"


class RowError(ValueError):
    """A data row could not be parsed; carries the physical line number."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


def _parse_timestamp(raw: str, line: int) -> float:
    raw = raw.strip()
    if not raw:
        raise RowError(line, "empty timestamp")
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError as exc:
        raise RowError(line, f"unparseable timestamp {raw!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def ingest_csv(path: str | Path, schema: EventSchema) -> list[EntityHistory]:
    """Read an events CSV into per-entity histories.

    Events are grouped by entity and sorted ascending by timestamp; ties keep
    file order.  Histories come back in order of first appearance in the file.
    Empty cells are missing values (imputed later at encode time).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        columns = {name: i for i, name in enumerate(header)}
        required = [schema.entity_field, schema.timestamp_field] + [
            f.name for f in schema.features
        ]
        for name in required:
            if name not in columns:
                raise SchemaError(f"input file {path} is missing column {name!r}")

        ent_col = columns[schema.entity_field]
        ts_col = columns[schema.timestamp_field]
        buckets: dict[str, list[RawEvent]] = {}
        order: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            entity = row[ent_col]
            ts = _parse_timestamp(row[ts_col], line_no)
            values: dict[str, object] = {}
            for feat in schema.features:
                cell = row[columns[feat.name]].strip()
                if cell == "":
                    values[feat.name] = None
                elif feat.kind is FeatureKind.NUMERIC:
                    try:
                        values[feat.name] = float(cell)
                    except ValueError as exc:
                        raise RowError(
                            line_no, f"column {feat.name!r} has non-numeric value {cell!r}"
                        ) from exc
                else:
                    values[feat.name] = cell
            if entity not in buckets:
                buckets[entity] = []
                order.append(entity)
            buckets[entity].append(RawEvent(entity, ts, values))

    histories = []
    for entity in order:
        events = sorted(buckets[entity], key=lambda ev: ev.timestamp)  # stable
        histories.append(EntityHistory(entity, events))
    return histories


def transform_gap(gap_days: float) -> float:
    """Heavy-tail squashing transform applied to inter-event gaps (in days)."""
    return math.log1p(gap_days)


@dataclass
class NormStats:
    """Training-set statistics needed to encode events.

    Numeric features carry mean/std (std floored); categorical features carry
    a value->index vocabulary with index 0 reserved for out-of-vocabulary.
    The derived time-gap feature has its own mean/std computed on transformed
    within-entity gaps.
    """

    numeric_mean: dict[str, float]
    numeric_std: dict[str, float]
    vocab: dict[str, dict[str, int]]
    gap_mean: float
    gap_std: float

    def cardinality(self, feature: str) -> int:
        return len(self.vocab[feature]) + 1  # +1 for the OOV slot at index 0

    def index_of(self, feature: str, value: object) -> int:
        if value is None:
            return 0
        return self.vocab[feature].get(str(value), 0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "numeric_mean": self.numeric_mean,
                "numeric_std": self.numeric_std,
                "vocab": self.vocab,
                "gap_mean": self.gap_mean,
                "gap_std": self.gap_std,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        d = json.loads(text)
        return cls(
            numeric_mean=d["numeric_mean"],
            numeric_std=d["numeric_std"],
            vocab={f: dict(v) for f, v in d["vocab"].items()},
            gap_mean=d["gap_mean"],
            gap_std=d["gap_std"],
        )


def fit_normalization(train: Sequence[EntityHistory], schema: EventSchema) -> NormStats:
    """Fit per-feature statistics on the training set.

    Numeric mean/std are population statistics over all training events
    (missing values skipped).  Vocabularies number values from 1 upward in
    first-seen order.  Gap statistics are computed over transformed
    within-entity consecutive gaps; first events contribute no gap sample.
    """
    if not train or all(len(h) == 0 for h in train):
        raise ValueError("cannot fit normalization on an empty training set")

    num_values: dict[str, list[float]] = {f.name: [] for f in schema.numeric_features}
    vocab: dict[str, dict[str, int]] = {f.name: {} for f in schema.categorical_features}
    gap_samples: list[float] = []

    for history in train:
        prev_ts = None
        for ev in history.events:
            if prev_ts is not None:
                gap_samples.append(transform_gap((ev.timestamp - prev_ts) / SECONDS_PER_DAY))
            prev_ts = ev.timestamp
            for feat in schema.features:
                value = ev.values.get(feat.name)
                if value is None:
                    continue
                if feat.kind is FeatureKind.NUMERIC:
                    num_values[feat.name].append(float(value))
                else:
                    v = vocab[feat.name]
                    key = str(value)
                    if key not in v:
                        v[key] = len(v) + 1

    numeric_mean = {}
    numeric_std = {}
    for name, vals in num_values.items():
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            numeric_mean[name] = float(arr.mean())
            numeric_std[name] = float(max(arr.std(), STD_FLOOR))
        else:
            numeric_mean[name] = 0.0
            numeric_std[name] = 1.0

    if gap_samples:
        arr = np.asarray(gap_samples, dtype=np.float64)
        gap_mean = float(arr.mean())
        gap_std = float(max(arr.std(), STD_FLOOR))
    else:
        # single-event histories only: keep the gap feature inert
        gap_mean, gap_std = 0.0, 1.0

    return NormStats(numeric_mean, numeric_std, vocab, gap_mean, gap_std)


@dataclass
class EncodedEvent:
    numeric_values: np.ndarray  # schema numerics in order, then the time gap
    category_indices: np.ndarray


@dataclass
class EncodedSequence:
    """Encoder-ready arrays for one entity.

    ``numerics`` has one column per schema numeric feature plus a final
    time-gap column, all z-scored with training statistics.  ``categories``
    holds vocabulary indices (0 = out of vocabulary).  ``timestamps`` keeps
    raw epoch seconds for time-difference computations.
    """

    entity_id: str
    numerics: np.ndarray  # (T, n_numeric + 1) float64
    categories: np.ndarray  # (T, n_categorical) int64
    timestamps: np.ndarray  # (T,) float64, epoch seconds

    def __len__(self) -> int:
        return self.numerics.shape[0]

    def __getitem__(self, t: int) -> EncodedEvent:
        return EncodedEvent(self.numerics[t], self.categories[t])

    def __iter__(self) -> Iterator[EncodedEvent]:
        for t in range(len(self)):
            yield self[t]


def encode_history(
    history: EntityHistory, stats: NormStats, schema: EventSchema
) -> EncodedSequence:
    """Encode one history with fitted statistics.

    Missing numerics impute to the training mean (z-score 0); unseen or
    missing categorical values map to index 0.  The time-gap column for event
    t is transform((t - t_prev) in days), z-scored; the first event uses gap 0
    before the transform.
    """
    n = len(history)
    num_feats = schema.numeric_features
    cat_feats = schema.categorical_features
    numerics = np.zeros((n, len(num_feats) + 1), dtype=np.float64)
    categories = np.zeros((n, len(cat_feats)), dtype=np.int64)
    timestamps = np.zeros(n, dtype=np.float64)

    prev_ts = None
    for t, ev in enumerate(history.events):
        timestamps[t] = ev.timestamp
        for j, feat in enumerate(num_feats):
            value = ev.values.get(feat.name)
            if value is None:
                numerics[t, j] = 0.0
            else:
                numerics[t, j] = (float(value) - stats.numeric_mean[feat.name]) / stats.numeric_std[
                    feat.name
                ]
        gap_days = 0.0 if prev_ts is None else (ev.timestamp - prev_ts) / SECONDS_PER_DAY
        numerics[t, -1] = (transform_gap(gap_days) - stats.gap_mean) / stats.gap_std
        prev_ts = ev.timestamp
        for j, feat in enumerate(cat_feats):
            categories[t, j] = stats.index_of(feat.name, ev.values.get(feat.name))

    return EncodedSequence(history.entity_id, numerics, categories, timestamps)


def encode_dataset(
    histories: Iterable[EntityHistory], stats: NormStats, schema: EventSchema
) -> list[EncodedSequence]:
    return [encode_history(h, stats, schema) for h in histories]


def split_entities(
    dataset: Sequence[EntityHistory], test_fraction: float, seed: int
) -> tuple[list[EntityHistory], list[EntityHistory]]:
    """Entity-level train/test partition, deterministic given the seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError(f"need at least 2 entities to split, got {n}")
    n_test = int(math.floor(test_fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [dataset[i] for i in range(n) if i not in test_idx]
    test = [dataset[i] for i in range(n) if i in test_idx]
    return train, test


def _truncate(history: EntityHistory, lo: float, hi: float) -> EntityHistory | None:
    events = [ev for ev in history.events if lo <= ev.timestamp < hi]
    if not events:
        return None
    return EntityHistory(history.entity_id, events)


def split_temporal_and_entity(
    dataset: Sequence[EntityHistory],
    boundaries: Sequence[float],
    fractions: Sequence[float],
    seed: int,
) -> tuple[list[EntityHistory], list[EntityHistory], list[EntityHistory]]:
    """Three-way split that is disjoint both in entities and in time.

    ``boundaries`` are two strictly increasing timestamps cutting the axis
    into consecutive train/validation/test windows; ``fractions`` assigns
    entities to the three splits.  Each split keeps only its own entities'
    events inside its window; entities left with no events are dropped.
    """
    if len(boundaries) != 2:
        raise ValueError("exactly two boundary timestamps are required")
    b0, b1 = float(boundaries[0]), float(boundaries[1])
    if not b0 < b1:
        raise ValueError(f"boundaries must be strictly increasing, got {boundaries}")
    if len(fractions) != 3:
        raise ValueError("need one fraction per split")
    fr = np.asarray(fractions, dtype=np.float64)
    if (fr < 0).any() or fr.sum() <= 0:
        raise ValueError(f"invalid fractions {fractions}")
    fr = fr / fr.sum()

    n = len(dataset)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(math.floor(fr[0] * n + 0.5))
    n_val = int(math.floor(fr[1] * n + 0.5))
    groups = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    windows = ((-math.inf, b0), (b0, b1), (b1, math.inf))

    splits: list[list[EntityHistory]] = []
    for name, idx, (lo, hi) in zip(("train", "validation", "test"), groups, windows):
        part = []
        for i in sorted(idx.tolist()):
            truncated = _truncate(dataset[i], lo, hi)
            if truncated is not None:
                part.append(truncated)
        if not part:
            warnings.warn(f"{name} split is empty for boundaries {boundaries}", stacklevel=2)
        splits.append(part)
    return splits[0], splits[1], splits[2]
