"""Domain-robust concept-bottleneck classifiers over precomputed embeddings."""

from . import (
    concept_space,
    domain_shift,
    embedding_io,
    errors,
    evaluation,
    numerics,
    synthetic,
    training,
)

__version__ = "0.1.0"

__all__ = [
    "concept_space",
    "domain_shift",
    "embedding_io",
    "errors",
    "evaluation",
    "numerics",
    "synthetic",
    "training",
    "__version__",
]
