"""Prediction, per-domain accuracy reports, attribution, and activation divergence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .concept_space import ActivationMatrix
from .embedding_io import DatasetManifest
from .errors import EmptySet, InvalidValue, ShapeError
from .training import Classifier

# Pinned histogram recipe for activation-distribution divergence. Reports
# carry the version so numbers stay comparable across runs.
JS_RECIPE = {
    "version": 1,
    "bins": "uniform over the shared min-max range",
    "smoothing": 1e-10,
    "log": "natural",
}
_JS_EPS = 1e-10


def _weights_of(classifier) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(classifier, Classifier):
        return classifier.weights, classifier.bias
    return np.asarray(classifier), None


def _values_of(activations) -> np.ndarray:
    if isinstance(activations, ActivationMatrix):
        return activations.values
    return np.asarray(activations, dtype=np.float32)


def predict(classifier, activations) -> np.ndarray:
    """Arg-max class per activation row; ties go to the lowest class index."""
    w, bias = _weights_of(classifier)
    acts = _values_of(activations)
    if acts.shape[1] != w.shape[1]:
        raise ShapeError(
            f"activations have {acts.shape[1]} concepts, classifier expects {w.shape[1]}")
    logits = acts.astype(np.float64) @ w.astype(np.float64).T
    if bias is not None:
        logits += bias.astype(np.float64)
    return np.argmax(logits, axis=1).astype(np.int64)


@dataclass(frozen=True)
class DomainAccuracy:
    n_items: int
    top1_accuracy: float


@dataclass(frozen=True)
class DomainReport:
    """Per-domain top-1 accuracy with train-domain / unseen-domain aggregates.

    Unseen-domain accuracy is the unweighted mean over non-train domains:
    every domain counts equally, regardless of item count.
    """

    per_domain: dict[str, DomainAccuracy]
    id_accuracy: float | None
    ood_accuracy: float | None
    train_domain: str
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "train_domain": self.train_domain,
            "per_domain": {
                name: {"n_items": acc.n_items, "top1_accuracy": acc.top1_accuracy}
                for name, acc in self.per_domain.items()
            },
            "id_accuracy": self.id_accuracy,
            "ood_accuracy": self.ood_accuracy,
            "warnings": list(self.warnings),
        }


def evaluate(classifier, activations, manifest: DatasetManifest) -> DomainReport:
    """Score predictions per domain; activation row i belongs to manifest row i."""
    acts = _values_of(activations)
    preds = predict(classifier, acts)
    per_domain: dict[str, DomainAccuracy] = {}
    warnings: list[str] = []
    for domain in manifest.domain_names:
        rows, labels = manifest.rows_and_labels(domain)
        if rows.size == 0:
            warnings.append(f"domain {domain!r} has no items; excluded")
            continue
        if rows.max() >= len(preds):
            raise ShapeError(
                f"manifest row {int(rows.max())} out of range for "
                f"{len(preds)} activation rows")
        correct = int((preds[rows] == labels).sum())
        per_domain[domain] = DomainAccuracy(n_items=int(rows.size),
                                            top1_accuracy=correct / rows.size)
    id_acc = per_domain[manifest.train_domain].top1_accuracy \
        if manifest.train_domain in per_domain else None
    if id_acc is None:
        warnings.append(f"train domain {manifest.train_domain!r} has no items")
    ood_accs = [acc.top1_accuracy for name, acc in per_domain.items()
                if name != manifest.train_domain]
    ood_acc = float(np.mean(ood_accs)) if ood_accs else None
    return DomainReport(per_domain=per_domain, id_accuracy=id_acc,
                        ood_accuracy=ood_acc, train_domain=manifest.train_domain,
                        warnings=tuple(warnings))


@dataclass(frozen=True)
class AttributionReport:
    """Top-k concepts per class, ranked by raw signed weight in the final layer."""

    k: int
    per_class: tuple[tuple[str, tuple[tuple[str, float], ...]], ...]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "per_class": [
                {"class": cls, "concepts": [{"concept": c, "weight": w} for c, w in ranked]}
                for cls, ranked in self.per_class
            ],
        }

    def concepts_for(self, class_name: str) -> list[str]:
        for cls, ranked in self.per_class:
            if cls == class_name:
                return [c for c, _ in ranked]
        raise KeyError(class_name)


def top_k_concepts(classifier: Classifier, k: int) -> AttributionReport:
    """Rank concepts per class by signed weight; ties break to the lower index."""
    m = classifier.n_concepts
    if not 1 <= k <= m:
        raise IndexError(f"k={k} out of range [1, {m}]")
    per_class = []
    for row, cls in enumerate(classifier.class_names):
        weights = classifier.weights[row].astype(np.float64)
        order = np.lexsort((np.arange(m), -weights))[:k]
        ranked = tuple((classifier.concept_names[i], float(weights[i])) for i in order)
        per_class.append((cls, ranked))
    return AttributionReport(k=k, per_class=tuple(per_class))


def js_divergence(act_a, act_b, n_bins: int = 50) -> float:
    """Jensen-Shannon divergence between two activation samples.

    Both samples are histogrammed over their shared min-max range with
    ``n_bins`` uniform bins, every bin gets 1e-10 of smoothing mass before
    normalization, and the divergence uses the natural log, so the result
    lies in [0, ln 2]. A degenerate shared range (all values equal) gives 0.
    """
    a = np.asarray(act_a, dtype=np.float64).ravel()
    b = np.asarray(act_b, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptySet("first activation sample is empty")
    if b.size == 0:
        raise EmptySet("second activation sample is empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidValue("activation samples contain non-finite values")
    if n_bins < 2:
        raise InvalidValue("n_bins must be >= 2")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        return 0.0
    p, _ = np.histogram(a, bins=n_bins, range=(lo, hi))
    q, _ = np.histogram(b, bins=n_bins, range=(lo, hi))
    p = p.astype(np.float64) + _JS_EPS
    q = q.astype(np.float64) + _JS_EPS
    p /= p.sum()
    q /= q.sum()
    mid = 0.5 * (p + q)
    js = 0.5 * float(np.sum(p * np.log(p / mid))) + 0.5 * float(np.sum(q * np.log(q / mid)))
    return js
