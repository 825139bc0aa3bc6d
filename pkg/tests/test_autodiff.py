import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctcseq import autodiff as ad
from ctcseq.autodiff import (
    Parameter,
    Tensor,
    backward,
    finite_difference_check,
    log_sum_exp,
    softmax,
)


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(np.array([0.0, 0.0]), axis=-1)
        assert np.allclose(out.data, [0.5, 0.5], atol=1e-15)

    def test_shift_invariance_no_overflow(self):
        out = softmax(np.array([1000.0, 1000.0, 1000.0]), axis=-1)
        assert np.all(np.isfinite(out.data))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_hand_evaluation(self):
        out = softmax(np.array([math.log(1.0), math.log(3.0)]), axis=-1)
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_invalid_axis(self):
        with pytest.raises(ValueError):
            softmax(np.zeros((2, 3)), axis=5)

    @given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=8))
    def test_rows_sum_to_one_and_positive(self, logits):
        out = softmax(np.array(logits), axis=-1).data
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.all(out > 0.0)


class TestLogSumExp:
    def test_two_terms_exact(self):
        got = log_sum_exp([math.log(0.2), math.log(0.3)])
        assert abs(got - math.log(0.5)) < 1e-12

    def test_absorbing_sentinel(self):
        assert log_sum_exp([float("-inf"), math.log(0.7)]) == pytest.approx(math.log(0.7), abs=1e-15)
        assert log_sum_exp([float("-inf"), float("-inf")]) == float("-inf")

    def test_many_tiny_terms(self):
        vals = [math.log(1e-300)] * 1000
        expected = math.log(1000.0) + math.log(1e-300)
        got = log_sum_exp(vals)
        assert math.isfinite(got)
        assert abs(got - expected) < 1e-10

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            log_sum_exp([])

    @given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=12))
    def test_bounds(self, vals):
        got = log_sum_exp(vals)
        assert got >= max(vals) - 1e-12
        assert got <= max(vals) + math.log(len(vals)) + 1e-12


class TestLinear:
    def test_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        w = Parameter(np.eye(3))
        b = Parameter(np.zeros(3))
        out = ad.linear(x, w, b)
        assert np.array_equal(out.data, x.data)

    def test_zero_weight_gives_bias(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        w = Parameter(np.zeros((3, 2)))
        b = Parameter(np.array([1.5, -2.0]))
        out = ad.linear(x, w, b)
        assert np.allclose(out.data, np.broadcast_to(b.data, (4, 2)))

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, 4)))
        w = Parameter(rng.normal(size=(4, 2)))
        out = ad.linear(x, w, None)
        ref = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    ref[i, j] += x.data[i, k] * w.data[k, j]
        assert np.abs(out.data - ref).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestBackward:
    def test_sum_gives_ones(self):
        w = Parameter(np.random.default_rng(0).normal(size=(3, 2)))
        backward(w.sum())
        assert np.array_equal(w.grad, np.ones((3, 2)))

    def test_quadratic_gives_two_w(self):
        w = Parameter(np.random.default_rng(1).normal(size=5))
        backward((w * w).sum())
        assert np.allclose(w.grad, 2.0 * w.data, atol=1e-15)

    def test_accumulation_doubles_exactly(self):
        w = Parameter(np.random.default_rng(2).normal(size=4))
        backward((w * w * w).sum())
        once = w.grad.copy()
        backward((w * w * w).sum())
        assert np.array_equal(w.grad, 2.0 * once)

    def test_non_scalar_rejected(self):
        w = Parameter(np.zeros(3))
        with pytest.raises(ValueError):
            backward(w * 2.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_composed_ops_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        w = Parameter(rng.normal(size=(3, 4)) * 0.5)
        x = Tensor(rng.normal(size=(2, 3)))

        def f():
            h = ad.relu(ad.matmul(x, w))
            s = ad.softmax(h + 0.1, axis=-1)
            return (ad.exp(s * 0.3) * ad.sigmoid(w.sum())).sum() + ad.logsumexp(w, axis=0).sum()

        assert finite_difference_check(f, w, 1e-5) < 1e-4


class TestFiniteDifferenceCheck:
    def test_quadratic_is_nearly_exact(self):
        w = Parameter(np.array([1.0, -2.0, 3.0]))
        err = finite_difference_check(lambda: (w * w).sum(), w, 1e-5)
        assert err < 1e-9

    def test_constant_function(self):
        w = Parameter(np.array([1.0, 2.0]))
        err = finite_difference_check(lambda: Tensor(4.2) + 0.0 * w.sum(), w, 1e-5)
        assert err < 1e-10
        assert np.allclose(w.grad, 0.0)


class TestOpGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_conv2d(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 2, 6, 6)))
        w = Parameter(rng.normal(size=(3, 2, 3, 3)) * 0.4)
        b = Parameter(rng.normal(size=3) * 0.1)
        stride = 1 + seed % 2
        f = lambda: (ad.conv2d(x, w, b, stride=stride, padding=1) ** 2).sum()
        assert finite_difference_check(f, w, 1e-5) < 1e-4
        assert finite_difference_check(f, b, 1e-5) < 1e-4

    def test_getitem_scatter(self):
        w = Parameter(np.arange(6.0).reshape(2, 3))
        out = w[0] * 2.0 + w[0]
        backward(out.sum())
        assert np.array_equal(w.grad, np.array([[3.0, 3.0, 3.0], [0.0, 0.0, 0.0]]))

    def test_dropout_mask_consistency(self):
        x = Parameter(np.ones(1000))
        out = ad.dropout(x, 0.4, np.random.default_rng(0))
        backward(out.sum())
        # gradient equals the applied mask, so zeros line up exactly
        assert np.array_equal(x.grad == 0.0, out.data == 0.0)

    def test_no_grad_blocks_graph(self):
        w = Parameter(np.ones(3))
        with ad.no_grad():
            out = (w * w).sum()
        assert out._vjp is None
