"""Self-supervised embeddings for multivariate event sequences.

The package pretrains a recurrent encoder on unlabelled transaction-style
histories with two generative objectives (predict the next event, reconstruct
recent past events under an exponential time decay), then serves the frozen
per-event embeddings to downstream pooling, feature-engineering and
evaluation stages.
"""

__version__ = "0.1.0"

from seqemb.schema import EventSchema, FeatureKind, FeatureSpec, EntityHistory, RawEvent

__all__ = [
    "EventSchema",
    "FeatureKind",
    "FeatureSpec",
    "EntityHistory",
    "RawEvent",
    "__version__",
]
