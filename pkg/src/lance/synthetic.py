"""Seeded synthetic embedding worlds with planted concept structure.

Every class gets two orthonormal planted directions: a class direction that
appears in images of that class everywhere, and a texture direction that
appears only in training-domain images (unseen domains render the class
without its texture; the training domain's style vector is zero by
convention, unseen domains each get an orthonormal style direction).

Shared concepts are dense mixtures of class directions, so their
activations survive a domain change but no single one is a crisp class
detector. Specific concepts pair a class's texture direction with a style
part built from a private latent style direction plus the unseen-domain
styles: on training images they are the purest discriminative feature
available, so an unregularized classifier leans on them, but on styled
images the texture is absent and what remains of their activation is a
class-independent style offset that drags the classifier's logits around.

The language side sees the same structure from the other end: training
prompts carry a trace of each class's texture, styled prompts carry the
descriptor's style plus whatever texture fraction keeps their norm equal to
the training prompt's (so the class direction cancels exactly in the
shift), and the resulting shift rows point along style-minus-texture. The
simulated activations therefore flag exactly the specific concepts, and
their columns are well conditioned enough that no weight combination slips
past the penalty.

Descriptors come in two groups: "relevant" ones whose style hugs an actual
unseen domain, and "off-axis" ones spread over the latent style vocabulary
with reduced weight on the real unseen directions (so excluding the
relevant descriptors still helps, just less).

Everything is a pure function of the spec, including every file the world
is saved to.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concept_space import ConceptBank, build_concept_bank, concept_activations
from .domain_shift import (
    DEFAULT_TEMPLATE,
    PromptEmbeddingTensor,
    compute_domain_shifts,
    save_prompt_tensor,
    simulate_domain_specific_activations,
)
from .embedding_io import (
    DatasetManifest,
    ManifestItem,
    TextBank,
    save_manifest,
    save_text_bank,
    write_array_file,
)
from .errors import InvalidValue, SpecError
from .evaluation import evaluate
from .training import Classifier, TrainConfig, train


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 64
    n_classes: int = 10
    n_shared_concepts: int = 20
    n_specific_concepts: int = 20
    domains: tuple[str, ...] = ("photo", "sketch", "clipart")  # first = train
    samples_per_class_per_domain: int = 50
    noise_sigma: float = 0.05
    style_strength: float = 0.8
    seed: int = 0
    # Descriptor bank shape; sized so count-sweep ablations have room and so
    # the descriptor styles span the whole style vocabulary (anything short
    # of spanning leaves the regularizer blind spots).
    descriptors_per_domain: int = 4
    n_irrelevant_descriptors: int = 40
    n_offaxis_styles: int = 20
    # How strongly training-domain images carry their class texture, how
    # much of that texture the training-domain prompts see, how hard
    # specific concepts lean on style, and how strongly off-axis descriptors
    # touch the unseen-style directions real evaluation domains use.
    texture_strength: float = 0.9
    prompt_texture_strength: float = 1.2
    concept_style_weight: float = 2.0
    irrelevant_core_leak: float = 0.4

    def __post_init__(self):
        if len(self.domains) < 1 or len(set(self.domains)) != len(self.domains):
            raise SpecError("domains must be a nonempty list of unique names")
        for name, value in (("n_classes", self.n_classes),
                            ("n_shared_concepts", self.n_shared_concepts),
                            ("n_specific_concepts", self.n_specific_concepts),
                            ("samples_per_class_per_domain", self.samples_per_class_per_domain)):
            if value < 1:
                raise SpecError(f"{name} must be >= 1, got {value}")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if self.style_strength < 0:
            raise SpecError("style_strength must be >= 0")
        if self.descriptors_per_domain < 0 or self.n_irrelevant_descriptors < 0:
            raise SpecError("descriptor counts must be >= 0")
        if self.n_offaxis_styles < 1 and self.n_irrelevant_descriptors > 0:
            raise SpecError("off-axis descriptors need n_offaxis_styles >= 1")
        if self.texture_strength < 0:
            raise SpecError("texture_strength must be >= 0")
        if self.prompt_texture_strength < 0:
            raise SpecError("prompt_texture_strength must be >= 0")
        if self.d < self.n_classes + len(self.domains):
            raise SpecError(
                f"d={self.d} too small: need at least n_classes + len(domains) "
                f"= {self.n_classes + len(self.domains)} dimensions")
        needed = 2 * self.n_classes + (len(self.domains) - 1) + self.n_offaxis_styles
        if self.d < needed:
            raise SpecError(
                f"d={self.d} too small for {needed} orthonormal planted directions "
                f"(class + texture + style)")

    @property
    def n_unseen(self) -> int:
        return len(self.domains) - 1

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(f"class{i:02d}" for i in range(self.n_classes))

    def to_dict(self) -> dict:
        return {
            "d": self.d, "n_classes": self.n_classes,
            "n_shared_concepts": self.n_shared_concepts,
            "n_specific_concepts": self.n_specific_concepts,
            "domains": list(self.domains),
            "samples_per_class_per_domain": self.samples_per_class_per_domain,
            "noise_sigma": self.noise_sigma, "style_strength": self.style_strength,
            "seed": self.seed,
            "descriptors_per_domain": self.descriptors_per_domain,
            "n_irrelevant_descriptors": self.n_irrelevant_descriptors,
            "n_offaxis_styles": self.n_offaxis_styles,
            "texture_strength": self.texture_strength,
            "prompt_texture_strength": self.prompt_texture_strength,
            "concept_style_weight": self.concept_style_weight,
            "irrelevant_core_leak": self.irrelevant_core_leak,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        doc = dict(doc)
        doc["domains"] = tuple(doc["domains"])
        return cls(**doc)


@dataclass(frozen=True)
class GroundTruth:
    """Which planted concepts and descriptors are which."""

    concept_kinds: tuple[str, ...]              # "shared" | "specific" per concept
    relevant_descriptor_indices: tuple[int, ...]
    descriptor_targets: tuple[str | None, ...]  # unseen domain per descriptor, or None

    @property
    def shared_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.concept_kinds) if k == "shared"]

    @property
    def specific_indices(self) -> list[int]:
        return [i for i, k in enumerate(self.concept_kinds) if k == "specific"]

    def to_dict(self) -> dict:
        return {
            "concept_kinds": list(self.concept_kinds),
            "relevant_descriptor_indices": list(self.relevant_descriptor_indices),
            "descriptor_targets": list(self.descriptor_targets),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruth":
        return cls(concept_kinds=tuple(doc["concept_kinds"]),
                   relevant_descriptor_indices=tuple(doc["relevant_descriptor_indices"]),
                   descriptor_targets=tuple(doc["descriptor_targets"]))


@dataclass(frozen=True)
class SyntheticWorld:
    spec: SyntheticSpec
    images: np.ndarray                   # (N, d) unit rows
    manifest: DatasetManifest
    concept_bank: ConceptBank
    prompts: PromptEmbeddingTensor
    ground_truth: GroundTruth
    style_directions: np.ndarray         # (n_unseen, d), training style is zero


def _orthonormal_columns(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    g = rng.standard_normal((d, k))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt(np.sum(v * v))


def generate(spec: SyntheticSpec) -> SyntheticWorld:
    """Build a full synthetic world: images, manifest, concepts, prompts, truth."""
    rng = np.random.default_rng(spec.seed)
    n_y = spec.n_classes
    k_unseen = spec.n_unseen
    class_names = spec.class_names

    basis = _orthonormal_columns(rng, spec.d,
                                 2 * n_y + k_unseen + spec.n_offaxis_styles)
    mu = basis[:, :n_y].T
    textures = basis[:, n_y:2 * n_y].T
    core_styles = basis[:, 2 * n_y:2 * n_y + k_unseen].T
    offaxis_styles = basis[:, 2 * n_y + k_unseen:].T
    domain_styles = np.zeros((len(spec.domains), spec.d))
    domain_styles[1:] = core_styles

    # Images: one noise draw up front keeps the construction order fixed.
    # Training-domain images carry their class texture; styled domains drop
    # it and gain their style direction instead.
    n_images = len(spec.domains) * n_y * spec.samples_per_class_per_domain
    noise = rng.standard_normal((n_images, spec.d)) * spec.noise_sigma
    raw = np.empty((n_images, spec.d))
    items = []
    row = 0
    for dom_idx, domain in enumerate(spec.domains):
        for y in range(n_y):
            base = mu[y] + spec.style_strength * domain_styles[dom_idx]
            if dom_idx == 0:
                base = base + spec.texture_strength * textures[y]
            for j in range(spec.samples_per_class_per_domain):
                raw[row] = base + noise[row]
                items.append(ManifestItem(id=f"{domain}/{class_names[y]}/{j:04d}",
                                          embedding_row=row, label=y, domain=domain))
                row += 1
    images = (raw / np.sqrt(np.einsum("ij,ij->i", raw, raw))[:, None]).astype(np.float32)
    manifest = DatasetManifest(items=tuple(items), class_names=class_names,
                               domain_names=spec.domains, train_domain=spec.domains[0])

    # Shared concepts: each one strongly supports a rotating triple of
    # classes over a dense mixture floor. The triples guarantee every class
    # has several genuinely supportive shared concepts (so a regularized
    # classifier has something to rank); the dense floor keeps each one
    # individually blurrier than a texture, so greedy training has a real
    # reason to prefer the specific concepts.
    concept_rows = []
    concept_names = []
    kinds = []
    shared_floor = rng.uniform(0.3, 0.6, size=(spec.n_shared_concepts, n_y))
    for j in range(spec.n_shared_concepts):
        c1 = j % n_y
        c2 = (c1 + 1 + j // n_y) % n_y
        c3 = (c1 + 4 + 3 * (j // n_y)) % n_y
        coeffs = shared_floor[j].copy()
        coeffs[c1] = 1.0
        if n_y > 1:
            coeffs[c2] = max(coeffs[c2], 0.8)
            coeffs[c3] = max(coeffs[c3], 0.65)
        concept_rows.append(_unit(coeffs @ mu))
        concept_names.append(f"shared-{j:02d} ({class_names[c1]})")
        kinds.append("shared")

    # Specific concepts: one class's texture plus a style part made of a
    # private latent style direction and a mixture of the unseen-domain
    # styles. The texture makes them the best feature on training images;
    # the style part is what prompt shifts can see, and the private
    # directions keep the simulated-activation columns well conditioned, so
    # no combination of specific weights slips past the penalty.
    style_core_mix = rng.uniform(0.05, 1.0, size=(spec.n_specific_concepts, max(k_unseen, 1)))
    for j in range(spec.n_specific_concepts):
        c = j % n_y
        parts = np.zeros(spec.d)
        if spec.n_offaxis_styles > 0:
            parts = parts + 0.5 * offaxis_styles[j % spec.n_offaxis_styles]
        if k_unseen > 0:
            parts = parts + _unit(style_core_mix[j, :k_unseen] @ core_styles)
        if np.any(parts):
            vec = _unit(textures[c] + spec.concept_style_weight * _unit(parts))
        else:
            vec = textures[c]
        concept_rows.append(vec)
        concept_names.append(f"specific-{j:02d} ({class_names[c]})")
        kinds.append("specific")
    bank = build_concept_bank(concept_names, np.asarray(concept_rows, dtype=np.float32))

    # Descriptors: per-unseen-domain variants plus a larger pool of off-axis
    # styles spread over the full vocabulary, with their weight on the real
    # unseen-style directions scaled down.
    descriptor_names = []
    descriptor_styles = []
    descriptor_targets: list[str | None] = []
    n_styles = k_unseen + spec.n_offaxis_styles
    style_vocab = np.vstack([core_styles, offaxis_styles])
    for k in range(k_unseen):
        jitter = rng.standard_normal((spec.descriptors_per_domain, n_styles))
        for i in range(spec.descriptors_per_domain):
            t = _unit(core_styles[k] + 0.15 * (jitter[i] @ style_vocab))
            descriptor_names.append(f"{spec.domains[k + 1]} style {i:02d}")
            descriptor_styles.append(t)
            descriptor_targets.append(spec.domains[k + 1])
    off_mix = rng.uniform(0.05, 1.0, size=(spec.n_irrelevant_descriptors, max(n_styles, 1)))
    off_mix[:, :k_unseen] *= spec.irrelevant_core_leak
    for i in range(spec.n_irrelevant_descriptors):
        t = _unit(off_mix[i, :n_styles] @ style_vocab) if n_styles > 0 else np.zeros(spec.d)
        descriptor_names.append(f"offaxis style {i:02d}")
        descriptor_styles.append(t)
        descriptor_targets.append(None)
    n_rel = k_unseen * spec.descriptors_per_domain

    # Training-domain prompts carry a trace of each class's texture (a
    # training-domain phrase describes what training-domain images look
    # like), so the prompt shifts know which directions styled domains
    # lose. Styled prompts retain the fraction of that texture that makes
    # their norm match the training prompt's norm exactly; the class
    # direction then cancels in the subtraction and the shift is pure
    # style-minus-texture signal.
    tp = spec.prompt_texture_strength
    ss = spec.style_strength
    if tp > ss:
        retention = float(np.sqrt(1.0 - (ss * ss) / (tp * tp)))
    else:
        retention = 0.0
    prompt_rows = np.empty(((len(descriptor_names) + 1) * n_y, spec.d))
    for i, style in enumerate(descriptor_styles):
        block = mu + ss * style[None, :] + retention * tp * textures
        block = block / np.sqrt(np.einsum("ij,ij->i", block, block))[:, None]
        prompt_rows[i * n_y:(i + 1) * n_y] = block
    train_block = mu + tp * textures
    train_block = train_block / np.sqrt(np.einsum("ij,ij->i", train_block, train_block))[:, None]
    prompt_rows[len(descriptor_names) * n_y:] = train_block
    prompts = PromptEmbeddingTensor(
        descriptors=TextBank(entries=descriptor_names),
        train_descriptor=spec.domains[0],
        class_names=class_names,
        embeddings=prompt_rows.astype(np.float32),
        template=DEFAULT_TEMPLATE)

    truth = GroundTruth(concept_kinds=tuple(kinds),
                        relevant_descriptor_indices=tuple(range(n_rel)),
                        descriptor_targets=tuple(descriptor_targets))
    return SyntheticWorld(spec=spec, images=images, manifest=manifest,
                          concept_bank=bank, prompts=prompts, ground_truth=truth,
                          style_directions=core_styles.astype(np.float32))


def save_world(world: SyntheticWorld, outdir) -> None:
    """Write the world as a dataset directory in the standard file formats."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_array_file(world.images, outdir / "images.npy")
    save_manifest(world.manifest, outdir / "manifest.json")
    save_text_bank(list(world.concept_bank.names), outdir / "concepts.txt")
    write_array_file(world.concept_bank.embeddings, outdir / "concepts.npy")
    save_prompt_tensor(world.prompts, outdir / "prompts.npy", outdir / "prompts.json")
    (outdir / "ground_truth.json").write_text(
        json.dumps(world.ground_truth.to_dict(), indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class DdoEffectReport:
    """Paired baseline-vs-penalty run on one world, same data and seed."""

    id_baseline: float
    ood_baseline: float | None
    id_ddo: float
    ood_ddo: float | None
    delta_id: float
    delta_ood: float | None
    specific_mass_baseline: float
    specific_mass_ddo: float
    shared_mass_baseline: float
    shared_mass_ddo: float

    @property
    def specific_mass_ratio(self) -> float:
        if self.specific_mass_baseline == 0.0:
            return 0.0
        return self.specific_mass_ddo / self.specific_mass_baseline

    def to_dict(self) -> dict:
        return {
            "id_baseline": self.id_baseline, "ood_baseline": self.ood_baseline,
            "id_ddo": self.id_ddo, "ood_ddo": self.ood_ddo,
            "delta_id": self.delta_id, "delta_ood": self.delta_ood,
            "specific_weight_mass_baseline": self.specific_mass_baseline,
            "specific_weight_mass_ddo": self.specific_mass_ddo,
            "shared_weight_mass_baseline": self.shared_mass_baseline,
            "shared_weight_mass_ddo": self.shared_mass_ddo,
            "specific_mass_ratio": self.specific_mass_ratio,
        }


def _weight_mass(clf: Classifier, indices) -> float:
    if not len(indices):
        return 0.0
    return float(np.abs(clf.weights.astype(np.float64)[:, list(indices)]).sum())


def verify_ddo_effect(spec: SyntheticSpec, train_config_baseline: TrainConfig,
                      train_config_ddo: TrainConfig) -> DdoEffectReport:
    """Train twice on one generated world, differing only in lambda."""
    base_doc = train_config_baseline.to_dict()
    ddo_doc = train_config_ddo.to_dict()
    base_doc.pop("lambda")
    ddo_doc.pop("lambda")
    if base_doc != ddo_doc:
        raise InvalidValue("the two train configs may differ only in lambda")

    world = generate(spec)
    acts_all = concept_activations(world.images, world.concept_bank)
    train_rows, train_labels = world.manifest.rows_and_labels(world.manifest.train_domain)
    acts_train = acts_all.values[train_rows]
    shifts = compute_domain_shifts(world.prompts)
    sim = simulate_domain_specific_activations(shifts, world.concept_bank)

    results = {}
    for tag, config in (("baseline", train_config_baseline), ("ddo", train_config_ddo)):
        clf, _ = train(acts_train, train_labels, sim, config,
                       class_names=world.manifest.class_names,
                       concept_names=world.concept_bank.names)
        results[tag] = (clf, evaluate(clf, acts_all, world.manifest))

    clf_b, rep_b = results["baseline"]
    clf_d, rep_d = results["ddo"]
    truth = world.ground_truth
    delta_ood = None
    if rep_b.ood_accuracy is not None and rep_d.ood_accuracy is not None:
        delta_ood = rep_d.ood_accuracy - rep_b.ood_accuracy
    return DdoEffectReport(
        id_baseline=rep_b.id_accuracy, ood_baseline=rep_b.ood_accuracy,
        id_ddo=rep_d.id_accuracy, ood_ddo=rep_d.ood_accuracy,
        delta_id=rep_d.id_accuracy - rep_b.id_accuracy, delta_ood=delta_ood,
        specific_mass_baseline=_weight_mass(clf_b, truth.specific_indices),
        specific_mass_ddo=_weight_mass(clf_d, truth.specific_indices),
        shared_mass_baseline=_weight_mass(clf_b, truth.shared_indices),
        shared_mass_ddo=_weight_mass(clf_d, truth.shared_indices))
