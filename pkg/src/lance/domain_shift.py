"""Language-guided domain shifts and simulated domain-specific activations.

A domain shift is the raw difference between the prompt embedding of a class
under an unseen-domain descriptor and under the training-domain descriptor
("a sketch of a apple" minus "a photo of a apple"). Dotting those shift rows
against the concept bank simulates how each concept's activation would move
under that domain change, without touching a single image sample. The whole
tensor is materialized once per experiment and reused by every batch.

Normalization convention: prompt embeddings are unit-normalized BEFORE the
subtraction and the difference is never re-normalized, so the magnitude of a
shift stays meaningful. This is the single site that fixes the convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concept_space import ConceptBank
from .embedding_io import TextBank, read_array_file, write_array_file
from .errors import (
    DegenerateShift,
    EmptySet,
    InvalidValue,
    ShapeError,
    TemplateError,
)
from .numerics import as_matrix, as_vector, row_norms

DEFAULT_TEMPLATE = "a {domain} of a {class}"
DEGENERATE_SHIFT_NORM = 1e-6

# (N_p * N_y) rows of float32; default cap 256 MiB of simulated activations.
DEFAULT_SIMULATION_CAP_BYTES = 1 << 28


def render_prompt(template: str, domain_descriptor: str, class_name: str) -> str:
    """Substitute {domain} and {class}; the output is otherwise verbatim.

    No article fix-up ("a apple" stays as written): the prompt must be a
    transparent function of its inputs, grammar is the descriptor author's
    job.
    """
    if "{domain}" not in template:
        raise TemplateError(f"template {template!r} is missing {{domain}}")
    if "{class}" not in template:
        raise TemplateError(f"template {template!r} is missing {{class}}")
    return template.replace("{domain}", domain_descriptor).replace("{class}", class_name)


@dataclass(frozen=True)
class PromptEmbeddingTensor:
    """Unit-norm prompt embeddings for every (descriptor, class) pair.

    Rows are indexed row_of(i, y) = i * N_y + y; descriptor index N_p is
    reserved for the training-domain prompts.
    """

    descriptors: TextBank
    train_descriptor: str
    class_names: tuple[str, ...]
    embeddings: np.ndarray  # ((N_p + 1) * N_y, d)
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        expected = (len(self.descriptors) + 1) * len(self.class_names)
        if len(self.embeddings) != expected:
            raise ShapeError(
                f"prompt tensor has {len(self.embeddings)} rows, expected "
                f"({len(self.descriptors)}+1) x {len(self.class_names)} = {expected}")

    @property
    def n_descriptors(self) -> int:
        return len(self.descriptors)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def train_index(self) -> int:
        return self.n_descriptors

    def row_of(self, descriptor_index: int, class_index: int) -> int:
        if not 0 <= descriptor_index <= self.n_descriptors:
            raise ShapeError(f"descriptor index {descriptor_index} out of range")
        if not 0 <= class_index < self.n_classes:
            raise ShapeError(f"class index {class_index} out of range")
        return descriptor_index * self.n_classes + class_index

    def subset(self, descriptor_indices) -> "PromptEmbeddingTensor":
        """Restrict to a subset of descriptors (training rows always kept)."""
        idx = sorted(int(i) for i in descriptor_indices)
        if len(set(idx)) != len(idx):
            raise InvalidValue("duplicate descriptor indices in subset")
        if idx and not (0 <= idx[0] and idx[-1] < self.n_descriptors):
            raise InvalidValue(f"descriptor subset {idx} out of range")
        n_y = self.n_classes
        rows = [i * n_y + y for i in idx for y in range(n_y)]
        rows += [self.train_index * n_y + y for y in range(n_y)]
        names = [self.descriptors.entries[i] for i in idx]
        return PromptEmbeddingTensor(
            descriptors=TextBank(entries=names),
            train_descriptor=self.train_descriptor,
            class_names=self.class_names,
            embeddings=self.embeddings[rows],
            template=self.template)


def save_prompt_tensor(tensor: PromptEmbeddingTensor, array_path, sidecar_path) -> None:
    write_array_file(tensor.embeddings, array_path)
    doc = {
        "template": tensor.template,
        "train_descriptor": tensor.train_descriptor,
        "descriptors": list(tensor.descriptors.entries),
        "class_names": list(tensor.class_names),
    }
    Path(sidecar_path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_prompt_tensor(array_path, sidecar_path) -> PromptEmbeddingTensor:
    embeddings = read_array_file(array_path)
    doc = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    for key in ("template", "train_descriptor", "descriptors", "class_names"):
        if key not in doc:
            raise ShapeError(f"{sidecar_path}: missing field {key!r}")
    return PromptEmbeddingTensor(
        descriptors=TextBank(entries=[str(d) for d in doc["descriptors"]]),
        train_descriptor=str(doc["train_descriptor"]),
        class_names=tuple(str(c) for c in doc["class_names"]),
        embeddings=embeddings,
        template=str(doc["template"]))


@dataclass(frozen=True)
class DomainShiftTensor:
    """Raw prompt-embedding differences, one row per (descriptor, class)."""

    shifts: np.ndarray  # (N_p * N_y, d), NOT re-normalized
    provenance: PromptEmbeddingTensor
    degenerate_rows: tuple[int, ...] = ()

    @property
    def n_descriptors(self) -> int:
        return self.provenance.n_descriptors

    @property
    def n_classes(self) -> int:
        return self.provenance.n_classes

    def row_of(self, descriptor_index: int, class_index: int) -> int:
        if not 0 <= descriptor_index < self.n_descriptors:
            raise ShapeError(f"descriptor index {descriptor_index} out of range")
        if not 0 <= class_index < self.n_classes:
            raise ShapeError(f"class index {class_index} out of range")
        return descriptor_index * self.n_classes + class_index

    def decode_row(self, row: int) -> tuple[int, int]:
        if not 0 <= row < len(self.shifts):
            raise ShapeError(f"row {row} out of range")
        return divmod(row, self.n_classes)


def compute_domain_shifts(prompts: PromptEmbeddingTensor) -> DomainShiftTensor:
    """Subtract the training-domain prompt rows from every descriptor's rows.

    Rows whose norm falls below 1e-6 are flagged as degenerate: the
    descriptor is indistinguishable from the training domain for that class.
    """
    n_p, n_y = prompts.n_descriptors, prompts.n_classes
    train_block = prompts.embeddings[prompts.train_index * n_y:(prompts.train_index + 1) * n_y]
    if n_p == 0:
        empty = np.zeros((0, prompts.embeddings.shape[1]), dtype=np.float32)
        return DomainShiftTensor(shifts=empty, provenance=prompts)
    blocks = prompts.embeddings[: n_p * n_y].reshape(n_p, n_y, -1)
    shifts = (blocks - train_block[None, :, :]).reshape(n_p * n_y, -1)
    shifts = np.ascontiguousarray(shifts, dtype=np.float32)
    degenerate = tuple(int(i) for i in np.flatnonzero(row_norms(shifts) < DEGENERATE_SHIFT_NORM))
    return DomainShiftTensor(shifts=shifts, provenance=prompts, degenerate_rows=degenerate)


@dataclass(frozen=True)
class SimulatedActivations:
    """How every concept's activation would move under each domain shift."""

    values: np.ndarray  # (N_p * N_y, M)
    concept_names: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return len(self.values)


def simulate_domain_specific_activations(
        shifts: DomainShiftTensor, bank: ConceptBank,
        max_bytes: int = DEFAULT_SIMULATION_CAP_BYTES) -> SimulatedActivations:
    """Dot every shift row against every concept embedding, once.

    The result is independent of image samples, so it is computed a single
    time per experiment and reused by every training batch.
    """
    if shifts.shifts.shape[1] != bank.dim:
        raise ShapeError(
            f"shift dim {shifts.shifts.shape[1]} != concept dim {bank.dim}")
    needed = len(shifts.shifts) * bank.size * 4
    if needed > max_bytes:
        raise InvalidValue(
            f"simulated activations would take {needed} bytes "
            f"(cap {max_bytes}); lower the descriptor or concept count "
            f"or raise the cap")
    values = (shifts.shifts.astype(np.float64) @ bank.embeddings.astype(np.float64).T)
    return SimulatedActivations(values=values.astype(np.float32), concept_names=bank.names)


def domain_relevance_scores(bank: ConceptBank, shift_row) -> list[tuple[str, float]]:
    """Rank concepts by signed similarity with one domain-shift direction.

    Concepts whose activations move most under the shift score highest;
    ties break toward the lower concept index.
    """
    shift = as_vector(shift_row, name="shift_row")
    if shift.shape[0] != bank.dim:
        raise ShapeError(f"shift dim {shift.shape[0]} != concept dim {bank.dim}")
    if float(np.sqrt(np.sum(shift.astype(np.float64) ** 2))) == 0.0:
        raise DegenerateShift("shift vector is zero")
    scores = bank.embeddings.astype(np.float64) @ shift.astype(np.float64)
    order = np.lexsort((np.arange(bank.size), -scores))
    return [(bank.names[i], float(scores[i])) for i in order]


def class_domain_gap(src_images, tgt_images) -> np.ndarray:
    """Mean target-embedding minus mean source-embedding for one class."""
    src = as_matrix(src_images, name="source images")
    tgt = as_matrix(tgt_images, name="target images")
    if len(src) == 0:
        raise EmptySet("source image set is empty")
    if len(tgt) == 0:
        raise EmptySet("target image set is empty")
    if src.shape[1] != tgt.shape[1]:
        raise ShapeError(f"dim mismatch: source {src.shape[1]}, target {tgt.shape[1]}")
    gap = tgt.astype(np.float64).mean(axis=0) - src.astype(np.float64).mean(axis=0)
    return gap.astype(np.float32)
