"""Event schema and history containers shared by ingestion, encoding and models.

A schema declares, in a fixed order, which columns of an event record are
model features and whether each is numeric or categorical.  The order is
load-bearing: decoder output slices follow it, and so do exported feature
layouts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class SchemaError(ValueError):
    """Raised when a schema is malformed or does not match the data."""


class FeatureKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    """One declared feature.

    ``cardinality`` is only meaningful for categorical features and is filled
    in after a vocabulary has been fitted; it counts the distinct values seen
    in training plus one reserved out-of-vocabulary slot.
    """

    name: str
    kind: FeatureKind
    cardinality: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.kind is FeatureKind.NUMERIC and self.cardinality is not None:
            raise SchemaError(f"numeric feature {self.name!r} cannot carry a cardinality")
        if self.cardinality is not None and self.cardinality < 2:
            raise SchemaError(
                f"categorical feature {self.name!r} needs cardinality >= 2 "
                f"(OOV slot plus at least one real value), got {self.cardinality}"
            )


@dataclass(frozen=True)
class EventSchema:
    features: tuple[FeatureSpec, ...]
    timestamp_field: str = "timestamp"
    entity_field: str = "entity_id"

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature names in schema: {names}")
        for reserved in (self.timestamp_field, self.entity_field):
            if reserved in names:
                raise SchemaError(f"column {reserved!r} cannot also be a model feature")

    @property
    def numeric_features(self) -> tuple[FeatureSpec, ...]:
        return tuple(f for f in self.features if f.kind is FeatureKind.NUMERIC)

    @property
    def categorical_features(self) -> tuple[FeatureSpec, ...]:
        return tuple(f for f in self.features if f.kind is FeatureKind.CATEGORICAL)

    def feature(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature {name!r}")


@dataclass
class RawEvent:
    """A single ingested event: identifier, epoch-second timestamp, raw values.

    ``values`` maps feature name to a float (numeric), a string (categorical)
    or ``None`` for a missing value.
    """

    entity_id: str
    timestamp: float
    values: dict[str, object] = field(default_factory=dict)


@dataclass
class EntityHistory:
    """Time-ordered events belonging to one entity."""

    entity_id: str
    events: list[RawEvent]

    def __post_init__(self) -> None:
        for ev in self.events:
            if ev.entity_id != self.entity_id:
                raise ValueError(
                    f"event entity {ev.entity_id!r} does not match history {self.entity_id!r}"
                )
        ts = [ev.timestamp for ev in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"history {self.entity_id!r} has decreasing timestamps")

    def __len__(self) -> int:
        return len(self.events)


def save_schema(schema: EventSchema, path: str | Path) -> None:
    """Write a schema as a plain-text key/value document.

    Format: an ``[event]`` section naming the entity and timestamp columns and
    a ``[features]`` section mapping each feature name to ``numeric`` or
    ``categorical``, in model order.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep case of feature names
    cp["event"] = {
        "entity_field": schema.entity_field,
        "timestamp_field": schema.timestamp_field,
    }
    cp["features"] = {f.name: f.kind.value for f in schema.features}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def load_schema(path: str | Path) -> EventSchema:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    read = cp.read(path, encoding="utf-8")
    if not read:
        raise SchemaError(f"schema file not found: {path}")
    if "features" not in cp:
        raise SchemaError(f"schema file {path} is missing a [features] section")
    event = cp["event"] if "event" in cp else {}
    feats = []
    for name, kind in cp["features"].items():
        kind = kind.strip().lower()
        if kind not in (FeatureKind.NUMERIC.value, FeatureKind.CATEGORICAL.value):
            raise SchemaError(f"feature {name!r} has unknown kind {kind!r}")
        feats.append(FeatureSpec(name, FeatureKind(kind)))
    return EventSchema(
        features=tuple(feats),
        timestamp_field=event.get("timestamp_field", "timestamp"),
        entity_field=event.get("entity_field", "entity_id"),
    )
