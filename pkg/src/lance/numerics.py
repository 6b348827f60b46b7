"""Dense linear-algebra and optimizer primitives used by every other module.

Matrices are float32 numpy arrays in row-major order. Anything that reduces
over many elements (norms, dot products, softmax sums) accumulates in float64
and rounds back to float32 at the end, so results are stable at embedding
scale and reproducible for a fixed thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue, ShapeError, DegenerateRow


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, contiguous float32 2-D array."""
    m = np.asarray(values, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidValue(f"{name} contains non-finite values")
    return np.ascontiguousarray(m)


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float32 1-D array; (1, d) inputs are flattened."""
    v = np.asarray(values, dtype=np.float32)
    if v.ndim == 2 and v.shape[0] == 1:
        v = v[0]
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidValue(f"{name} contains non-finite values")
    return np.ascontiguousarray(v)


def row_norms(m: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row, accumulated in float64."""
    m64 = m.astype(np.float64)
    return np.sqrt(np.einsum("ij,ij->i", m64, m64))


def l2_normalize_rows(m) -> tuple[np.ndarray, list[int]]:
    """Scale each row to unit Euclidean norm.

    Zero rows are left untouched and reported in the returned index list so
    callers can decide whether that is a problem; shift vectors, for example,
    can legitimately collapse to zero.
    """
    m = as_matrix(m)
    norms = row_norms(m)
    zero_rows = [int(i) for i in np.flatnonzero(norms == 0.0)]
    safe = np.where(norms == 0.0, 1.0, norms)
    out = (m.astype(np.float64) / safe[:, None]).astype(np.float32)
    return out, zero_rows


def cosine_similarity(a, b) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` (N x d) and ``b`` (M x d).

    Returns an N x M float32 matrix with entries in [-1, 1] up to rounding.
    Rows are normalized in float64 before the product, so the result is
    invariant to positive row scaling.
    """
    a = as_matrix(a, name="a")
    b = as_matrix(b, name="b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"column mismatch: a has {a.shape[1]}, b has {b.shape[1]}")
    for name, m in (("a", a), ("b", b)):
        norms = row_norms(m)
        zeros = np.flatnonzero(norms == 0.0)
        if zeros.size:
            raise DegenerateRow(f"row {int(zeros[0])} of {name} has zero norm")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    a64 /= row_norms(a)[:, None]
    b64 /= row_norms(b)[:, None]
    return (a64 @ b64.T).astype(np.float32)


def log_softmax_rows(logits) -> np.ndarray:
    """Row-wise log-softmax via max subtraction; safe for logits up to ~1e4."""
    m = as_matrix(logits, name="logits")
    x = m.astype(np.float64)
    x -= x.max(axis=1, keepdims=True)
    x -= np.log(np.exp(x).sum(axis=1, keepdims=True))
    return x.astype(np.float32)


@dataclass
class AdamState:
    """Optimizer state for one parameter matrix.

    Confined to a single training thread; every step returns a fresh state.
    """

    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise InvalidValue("beta1 and beta2 must lie strictly between 0 and 1")
        if self.epsilon <= 0.0:
            raise InvalidValue("epsilon must be > 0")
        if self.lr <= 0.0:
            raise InvalidValue("lr must be > 0")
        if self.step < 0:
            raise InvalidValue("step must be >= 0")

    @classmethod
    def fresh(cls, shape: tuple[int, int], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        zeros = np.zeros(shape, dtype=np.float32)
        return cls(step=0, first_moment=zeros, second_moment=zeros.copy(),
                   lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and parameter."""
    if param.shape != state.first_moment.shape or grad.shape != param.shape:
        raise ShapeError(
            f"param {param.shape}, grad {grad.shape} and moments "
            f"{state.first_moment.shape} must share one shape")
    g = grad.astype(np.float32)
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_param = (param - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(np.float32)
    new_state = AdamState(step=t, first_moment=m, second_moment=v, lr=state.lr,
                          beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon)
    return new_state, new_param
