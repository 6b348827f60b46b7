"""Concept bank construction and concept activation vectors.

An image's activation vector is its cosine similarity against every concept
embedding; the final classifier sees nothing but these activations. Concept
embeddings are frozen inputs, never trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding_io import TextBank
from .errors import DegenerateRow, InvalidValue, ShapeError
from .numerics import as_matrix, cosine_similarity, l2_normalize_rows


@dataclass(frozen=True)
class ConceptBank:
    names: tuple[str, ...]
    embeddings: np.ndarray  # (M, d), unit-norm rows

    def __post_init__(self):
        if len(self.names) < 2:
            raise InvalidValue("a concept bank needs at least 2 concepts")
        if len(self.embeddings) != len(self.names):
            raise ShapeError(
                f"{len(self.names)} names but {len(self.embeddings)} embedding rows")

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class ActivationMatrix:
    values: np.ndarray  # (N, M) cosine similarities
    concept_names: tuple[str, ...]

    @property
    def n_concepts(self) -> int:
        return len(self.concept_names)


def build_concept_bank(names, embeddings) -> ConceptBank:
    """Pair concept texts with their embedding rows, re-normalizing each row.

    ``names`` may be a TextBank or any sequence of strings; row order must
    match entry order.
    """
    texts = list(names.entries) if isinstance(names, TextBank) else [str(n) for n in names]
    embeddings = as_matrix(embeddings, name="concept embeddings")
    if len(texts) != len(embeddings):
        raise ShapeError(f"{len(texts)} concept names but {len(embeddings)} embedding rows")
    normalized, zero_rows = l2_normalize_rows(embeddings)
    if zero_rows:
        raise DegenerateRow(f"concept {texts[zero_rows[0]]!r} has a zero embedding")
    return ConceptBank(names=tuple(texts), embeddings=normalized)


def concept_activations(images, bank: ConceptBank) -> ActivationMatrix:
    """Cosine similarity of every image row against every concept."""
    values = cosine_similarity(images, bank.embeddings)
    return ActivationMatrix(values=values, concept_names=bank.names)
