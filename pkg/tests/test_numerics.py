import math

import numpy as np
import pytest

from lance.errors import DegenerateRow, InvalidValue, ShapeError
from lance.numerics import (
    AdamState,
    adam_step,
    as_matrix,
    cosine_similarity,
    l2_normalize_rows,
    log_softmax_rows,
)


class TestNormalizeRows:
    def test_three_four_five(self):
        out, zeros = l2_normalize_rows([[3.0, 4.0]])
        np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-7)
        assert zeros == []

    def test_zero_row_preserved_and_flagged(self):
        out, zeros = l2_normalize_rows([[0.0, 0.0]])
        np.testing.assert_array_equal(out, [[0.0, 0.0]])
        assert zeros == [0]

    def test_hand_computed_norm_two(self):
        # norm of [1,1,1,1] is 2, so every entry becomes 1/2
        out, _ = l2_normalize_rows([[1.0, 1.0, 1.0, 1.0]])
        np.testing.assert_allclose(out, [[0.5] * 4], atol=1e-7)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(20, 7)).astype(np.float32)
        once, _ = l2_normalize_rows(m)
        twice, _ = l2_normalize_rows(once)
        np.testing.assert_allclose(once, twice, atol=1e-6)

    def test_norms_within_tolerance(self):
        rng = np.random.default_rng(1)
        out, _ = l2_normalize_rows(rng.normal(size=(50, 33)))
        norms = np.sqrt((out.astype(np.float64) ** 2).sum(axis=1))
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidValue):
            l2_normalize_rows([[np.nan, 1.0]])


class TestCosineSimilarity:
    def test_identical_unit_vectors(self):
        np.testing.assert_allclose(cosine_similarity([[1.0, 0.0]], [[1.0, 0.0]]),
                                   [[1.0]], atol=1e-7)

    def test_orthogonal(self):
        np.testing.assert_allclose(cosine_similarity([[1.0, 0.0]], [[0.0, 1.0]]),
                                   [[0.0]], atol=1e-7)

    def test_hand_computed(self):
        # dot = 1, norms = sqrt(2) and 1
        out = cosine_similarity([[1.0, 1.0]], [[1.0, 0.0]])
        assert abs(float(out[0, 0]) - 0.70710678) < 1e-6

    def test_diagonal_is_one_for_unit_rows(self):
        rng = np.random.default_rng(2)
        a, _ = l2_normalize_rows(rng.normal(size=(12, 9)))
        sim = cosine_similarity(a, a)
        np.testing.assert_allclose(np.diag(sim), 1.0, atol=1e-5)

    def test_invariant_to_positive_scaling(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 5))
        b = rng.normal(size=(4, 5))
        base = cosine_similarity(a, b)
        for k in (1e-3, 7.0, 250.0):
            np.testing.assert_allclose(cosine_similarity(k * a, b), base, atol=1e-5)

    def test_entries_in_cosine_range(self):
        rng = np.random.default_rng(4)
        sim = cosine_similarity(rng.normal(size=(30, 16)), rng.normal(size=(25, 16)))
        assert sim.min() >= -1 - 1e-6 and sim.max() <= 1 + 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            cosine_similarity([[1.0, 0.0]], [[1.0, 0.0, 0.0]])

    def test_zero_row_reports_index(self):
        with pytest.raises(DegenerateRow, match="row 1 of a"):
            cosine_similarity([[1.0, 0.0], [0.0, 0.0]], [[1.0, 0.0]])
        with pytest.raises(DegenerateRow, match="row 0 of b"):
            cosine_similarity([[1.0, 0.0]], [[0.0, 0.0]])


class TestLogSoftmaxRows:
    def test_uniform(self):
        out = log_softmax_rows([[0.0, 0.0]])
        np.testing.assert_allclose(out, [[-math.log(2)] * 2], atol=1e-7)

    def test_large_magnitude_no_overflow(self):
        out = log_softmax_rows([[1000.0, 0.0]])
        assert abs(float(out[0, 0])) < 1e-6
        assert abs(float(out[0, 1]) + 1000.0) < 1e-3
        assert np.all(np.isfinite(out))

    def test_matches_high_precision_reference(self):
        logits = [1.0, 2.0, 3.0]
        denom = math.log(math.fsum(math.exp(x) for x in logits))
        expected = [x - denom for x in logits]
        out = log_softmax_rows([logits])
        np.testing.assert_allclose(out[0], expected, atol=1e-6)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        for scale in (1.0, 1e4):
            logits = rng.normal(size=(8, 6)) * scale
            out = log_softmax_rows(logits)
            sums = np.exp(out.astype(np.float64)).sum(axis=1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def _reference_adam(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    # independent float64 re-implementation used as the oracle
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        state = AdamState.fresh((2, 3), lr=0.1)
        param = np.ones((2, 3), dtype=np.float32)
        new_state, new_param = adam_step(state, param, np.zeros((2, 3), dtype=np.float32))
        np.testing.assert_array_equal(new_param, param)
        assert new_state.step == 1

    def test_single_step_hand_value(self):
        state = AdamState.fresh((1, 1), lr=0.1)
        _, new_param = adam_step(state, np.float32([[1.0]]), np.float32([[1.0]]))
        assert abs(float(new_param[0, 0]) - 0.9) < 1e-6

    def test_fifty_steps_on_quadratic(self):
        state = AdamState.fresh((1, 1), lr=0.1)
        param = np.float32([[1.0]])
        grads = []
        for _ in range(50):
            g = 2.0 * param
            grads.append(float(g[0, 0]))
            state, param = adam_step(state, param, g.astype(np.float32))
        assert abs(float(param[0, 0])) < 1.0
        ref = _reference_adam(1.0, grads, lr=0.1)
        assert abs(float(param[0, 0]) - ref) < 1e-4

    def test_shape_mismatch(self):
        state = AdamState.fresh((2, 2))
        with pytest.raises(ShapeError):
            adam_step(state, np.zeros((2, 3), dtype=np.float32),
                      np.zeros((2, 3), dtype=np.float32))

    @pytest.mark.parametrize("kwargs", [
        {"beta1": 1.0}, {"beta2": 0.0}, {"epsilon": 0.0}, {"lr": -1.0},
    ])
    def test_hyperparameter_validation(self, kwargs):
        with pytest.raises(InvalidValue):
            AdamState.fresh((1, 1), **kwargs)


def test_as_matrix_rejects_non_2d():
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])
