"""Final-layer training: cross-entropy plus the descriptor-orthogonality penalty.

The classifier is a single linear map from concept activations to class
logits (optionally two stacked linear layers). The orthogonality penalty is
the mean absolute value of the logits the classifier would produce on the
simulated domain-specific activations; driving it to zero makes the final
layer blind to the directions concept activations move under domain shifts.
The penalty never sees image samples, so it enters every batch at full
strength rather than scaled by batch size.

All loss and gradient math runs in float64; parameters are stored float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concept_space import ActivationMatrix
from .domain_shift import SimulatedActivations
from .errors import DivergenceError, InvalidValue, ShapeError
from .numerics import AdamState, adam_step


@dataclass
class TrainConfig:
    lambda_: float = 1.0      # weight of the orthogonality penalty; 0 = plain baseline
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    use_bias: bool = False
    hidden_dim: int | None = None  # two-layer variant; penalty stays on the final layer

    def __post_init__(self):
        if self.lambda_ < 0:
            raise InvalidValue("lambda must be >= 0")
        if self.batch_size < 1:
            raise InvalidValue("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidValue("epochs must be >= 1")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise InvalidValue("hidden_dim must be >= 1 when set")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_, "epochs": self.epochs,
            "batch_size": self.batch_size, "lr": self.lr,
            "beta1": self.beta1, "beta2": self.beta2, "epsilon": self.epsilon,
            "seed": self.seed, "shuffle": self.shuffle,
            "use_bias": self.use_bias, "hidden_dim": self.hidden_dim,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lambda_"] = doc.pop("lambda")
        return cls(**doc)


@dataclass(frozen=True)
class Classifier:
    """Trained linear classifier over concept activations.

    ``weights`` always maps concept space to class logits (N_y x M); for the
    two-layer variant this is the exact product of the two linear layers, so
    prediction and attribution need no special casing.
    """

    weights: np.ndarray
    class_names: tuple[str, ...]
    concept_names: tuple[str, ...]
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.weights.shape != (len(self.class_names), len(self.concept_names)):
            raise ShapeError(
                f"weights {self.weights.shape} inconsistent with "
                f"{len(self.class_names)} classes x {len(self.concept_names)} concepts")
        if not np.all(np.isfinite(self.weights)):
            raise InvalidValue("classifier weights contain non-finite values")
        if self.bias is not None and self.bias.shape != (len(self.class_names),):
            raise ShapeError(f"bias shape {self.bias.shape} != ({len(self.class_names)},)")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_concepts(self) -> int:
        return len(self.concept_names)


def _activation_values(activations) -> np.ndarray:
    if isinstance(activations, ActivationMatrix):
        return activations.values
    return np.asarray(activations, dtype=np.float32)


def _sim_values(sim) -> np.ndarray | None:
    if sim is None:
        return None
    if isinstance(sim, SimulatedActivations):
        return sim.values
    return np.asarray(sim, dtype=np.float32)


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = int(labels[(labels < 0) | (labels >= n_classes)][0])
        raise IndexError(f"label {bad} out of range for {n_classes} classes")
    return labels


def _ce_terms(weights: np.ndarray, activations: np.ndarray, labels: np.ndarray,
              bias: np.ndarray | None) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Mean cross-entropy, dL/dW and (if bias given) dL/db, all float64."""
    w = np.asarray(weights, dtype=np.float64)
    a = activations.astype(np.float64)
    logits = a @ w.T
    if bias is not None:
        logits += np.asarray(bias, dtype=np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -float(log_probs[np.arange(n), labels].mean())
    delta = np.exp(log_probs)
    delta[np.arange(n), labels] -= 1.0
    grad_w = delta.T @ a / n
    grad_b = delta.mean(axis=0) if bias is not None else None
    return loss, grad_w, grad_b


def cross_entropy(weights, activations, labels, bias=None) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of the linear classifier and its weight gradient."""
    acts = _activation_values(activations)
    weights = np.asarray(weights)
    if acts.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"activations have {acts.shape[1]} concepts, weights expect {weights.shape[1]}")
    labels = _check_labels(labels, weights.shape[0])
    if labels.size != len(acts):
        raise ShapeError(f"{len(acts)} activation rows but {labels.size} labels")
    if labels.size == 0:
        raise ShapeError("cross_entropy needs at least one sample")
    loss, grad_w, _ = _ce_terms(weights, acts, labels, bias)
    return loss, grad_w


def _ddo_terms(weights: np.ndarray, sim: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean |logit| over all (shift row, output class) pairs, plus subgradient.

    The reduction is a plain mean over both axes so the penalty's scale does
    not depend on descriptor count, class count, or output width; sign(0) is
    taken as 0. This is the single site that fixes the reduction.
    """
    w = np.asarray(weights, dtype=np.float64)
    if sim.shape[0] == 0:
        return 0.0, np.zeros_like(w)
    s = sim.astype(np.float64)
    v = s @ w.T                      # (rows, N_y)
    loss = float(np.abs(v).mean())
    grad = np.sign(v).T @ s / v.size
    return loss, grad


def ddo_loss(weights, sim) -> tuple[float, np.ndarray]:
    """Orthogonality penalty of the final layer against simulated activations."""
    weights = np.asarray(weights)
    values = _sim_values(sim)
    if values is None:
        values = np.zeros((0, weights.shape[1]), dtype=np.float32)
    if values.shape[0] and values.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"simulated activations have {values.shape[1]} concepts, "
            f"weights expect {weights.shape[1]}")
    return _ddo_terms(weights, values)


def total_loss(weights, activations, labels, sim, lambda_: float,
               bias=None) -> tuple[float, np.ndarray]:
    """Cross-entropy plus lambda times the orthogonality penalty.

    With lambda = 0 this is bit-for-bit the cross-entropy path; the penalty
    code never runs.
    """
    if lambda_ < 0:
        raise InvalidValue("lambda must be >= 0")
    if lambda_ == 0.0:
        return cross_entropy(weights, activations, labels, bias=bias)
    ce, grad_ce = cross_entropy(weights, activations, labels, bias=bias)
    pen, grad_pen = ddo_loss(weights, sim)
    return ce + lambda_ * pen, grad_ce + lambda_ * grad_pen


@dataclass
class EpochStats:
    epoch: int
    ce: float
    ddo: float
    total: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "ce": self.ce, "ddo": self.ddo, "total": self.total}


def train(activations, labels, sim, config: TrainConfig,
          class_names=None, concept_names=None) -> tuple[Classifier, list[EpochStats]]:
    """Fit the final layer with seeded mini-batch Adam.

    Weights start at zero (initial cross-entropy is exactly ln N_y), the
    shuffle order is a pure function of the seed, and the returned classifier
    is immutable. Deterministic for a fixed (seed, thread count).
    """
    acts = _activation_values(activations)
    if isinstance(activations, ActivationMatrix) and concept_names is None:
        concept_names = activations.concept_names
    n, m = acts.shape
    if n == 0:
        raise ShapeError("training needs at least one sample")
    if class_names is None:
        n_y = int(np.asarray(labels).max()) + 1 if len(labels) else 0
        class_names = tuple(f"class-{i}" for i in range(n_y))
    else:
        class_names = tuple(class_names)
    if concept_names is None:
        concept_names = tuple(f"concept-{i}" for i in range(m))
    else:
        concept_names = tuple(concept_names)
    if len(concept_names) != m:
        raise ShapeError(f"{len(concept_names)} concept names for {m} activation columns")
    n_y = len(class_names)
    labels = _check_labels(labels, n_y)
    if labels.size != n:
        raise ShapeError(f"{n} activation rows but {labels.size} labels")

    sim_values = _sim_values(sim)
    penalty_on = config.lambda_ > 0 and sim_values is not None and sim_values.shape[0] > 0
    if penalty_on and sim_values.shape[1] != m:
        raise ShapeError(
            f"simulated activations have {sim_values.shape[1]} concepts, expected {m}")

    rng = np.random.default_rng(config.seed)
    two_layer = config.hidden_dim is not None
    if two_layer:
        h = config.hidden_dim
        # Final layer starts at zero so the initial loss is still exactly
        # ln N_y; the hidden layer needs a nonzero seed to break symmetry.
        w1 = (rng.standard_normal((h, m)) / np.sqrt(m)).astype(np.float32)
        w2 = np.zeros((n_y, h), dtype=np.float32)
        adam_w1 = AdamState.fresh(w1.shape, config.lr, config.beta1, config.beta2, config.epsilon)
        adam_w2 = AdamState.fresh(w2.shape, config.lr, config.beta1, config.beta2, config.epsilon)
    else:
        w = np.zeros((n_y, m), dtype=np.float32)
        adam_w = AdamState.fresh(w.shape, config.lr, config.beta1, config.beta2, config.epsilon)
    bias = np.zeros((n_y,), dtype=np.float32) if config.use_bias else None
    if bias is not None:
        adam_b = AdamState.fresh((1, n_y), config.lr, config.beta1, config.beta2, config.epsilon)

    log: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        ce_sum = pen_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            batch_acts = acts[batch]
            batch_labels = labels[batch]
            if two_layer:
                w1_64 = w1.astype(np.float64)
                w2_64 = w2.astype(np.float64)
                hidden = batch_acts.astype(np.float64) @ w1_64.T
                logits = hidden @ w2_64.T
                if bias is not None:
                    logits += bias.astype(np.float64)
                logits -= logits.max(axis=1, keepdims=True)
                log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
                n_b = len(batch_labels)
                ce = -float(log_probs[np.arange(n_b), batch_labels].mean())
                delta = np.exp(log_probs)
                delta[np.arange(n_b), batch_labels] -= 1.0
                delta /= n_b
                grad_w2 = delta.T @ hidden
                grad_b = delta.sum(axis=0) if bias is not None else None
                grad_w1 = (delta @ w2_64).T @ batch_acts.astype(np.float64)
                if penalty_on:
                    sim_hidden = sim_values.astype(np.float64) @ w1_64.T
                    pen, grad_w2_pen = _ddo_terms(w2, sim_hidden)
                    total = ce + config.lambda_ * pen
                    grad_w2 = grad_w2 + config.lambda_ * grad_w2_pen
                else:
                    pen = 0.0
                    total = ce
                if not np.isfinite(total):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, "
                                          f"batch {n_batches}")
                adam_w1, w1 = adam_step(adam_w1, w1, grad_w1.astype(np.float32))
                adam_w2, w2 = adam_step(adam_w2, w2, grad_w2.astype(np.float32))
            else:
                ce, grad_ce, grad_b = _ce_terms(w, batch_acts, batch_labels, bias)
                if penalty_on:
                    pen, grad_pen = _ddo_terms(w, sim_values)
                    total = ce + config.lambda_ * pen
                    grad = grad_ce + config.lambda_ * grad_pen
                else:
                    pen = 0.0
                    total = ce
                    grad = grad_ce
                if not np.isfinite(total):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, "
                                          f"batch {n_batches}")
                adam_w, w = adam_step(adam_w, w, grad.astype(np.float32))
            if bias is not None:
                adam_b, bias_row = adam_step(adam_b, bias[None, :],
                                             grad_b[None, :].astype(np.float32))
                bias = bias_row[0]
            ce_sum += ce
            pen_sum += pen
            n_batches += 1
        log.append(EpochStats(epoch=epoch, ce=ce_sum / n_batches, ddo=pen_sum / n_batches,
                              total=(ce_sum + config.lambda_ * pen_sum) / n_batches))

    weights = (w2.astype(np.float64) @ w1.astype(np.float64)).astype(np.float32) if two_layer else w
    clf = Classifier(weights=weights, class_names=class_names,
                     concept_names=concept_names,
                     bias=bias.copy() if bias is not None else None)
    return clf, log


MODEL_FORMAT_VERSION = 1


def save_classifier(clf: Classifier, path, config: TrainConfig | None = None) -> None:
    doc = {
        "class_names": list(clf.class_names),
        "concept_names": list(clf.concept_names),
        "weights": [[float(x) for x in row] for row in clf.weights],
        "bias": [float(x) for x in clf.bias] if clf.bias is not None else None,
        "config": config.to_dict() if config is not None else None,
        "format_version": MODEL_FORMAT_VERSION,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_classifier(path) -> tuple[Classifier, dict | None]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ShapeError(f"{path}: unsupported model format_version "
                         f"{doc.get('format_version')!r}")
    weights = np.asarray(doc["weights"], dtype=np.float32)
    bias = None if doc.get("bias") is None else np.asarray(doc["bias"], dtype=np.float32)
    clf = Classifier(weights=weights,
                     class_names=tuple(doc["class_names"]),
                     concept_names=tuple(doc["concept_names"]),
                     bias=bias)
    return clf, doc.get("config")
