import math

import numpy as np
import pytest

from graphmi import tensor as T
from graphmi.errors import NumericError, ShapeError
from graphmi.tensor import AdamState, Tensor, adam_step

from oracles import adam_scalar_recurrence, gradcheck, numeric_grad, segment_sum_loop


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.values, [[3, 4], [5, 6]])

    def test_direct_arithmetic(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]),
                       Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.values, [[19, 22], [43, 50]])

    def test_dimension_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_of_sum_is_column_sums(self):
        # d sum(A @ B) / dA broadcasts B's column sums across rows of A.
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 5)))
        loss = T.sum_all(T.matmul(a, b))
        T.backward(loss)
        expected = np.tile(b.values.sum(axis=1), (3, 1))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
        numeric = numeric_grad(lambda: T.sum_all(T.matmul(a, b)), a)
        rel = np.abs(a.grad - numeric) / np.maximum(1.0, np.abs(numeric))
        assert rel.max() < 1e-6

    def test_gradcheck_both_operands(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 2)))
        gradcheck(lambda: T.sum_all(T.square(T.matmul(a, b))),
                  [("a", a), ("b", b)])


class TestElementwise:
    def test_softplus_zero_is_log_two(self):
        assert T.softplus(Tensor([[0.0]])).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_relu_values(self):
        out = T.relu(Tensor([[-3.0, 3.0]]))
        np.testing.assert_array_equal(out.values, [[0.0, 3.0]])

    def test_softplus_large_input_no_overflow(self):
        out = T.softplus(Tensor([[50.0]]))
        assert out.item() == pytest.approx(50.0 + math.exp(-50.0), rel=1e-15)
        assert np.isfinite(T.softplus(Tensor([[1000.0]])).item())

    def test_softplus_bounds(self):
        z = np.random.default_rng(2).normal(scale=10, size=(5, 5))
        out = T.softplus(Tensor(z)).values
        assert np.all(out >= 0)
        assert np.all(out >= z)

    def test_add_sub_mul_shapes_must_agree(self):
        for op in (T.add, T.sub, T.mul):
            with pytest.raises(ShapeError):
                op(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))

    def test_scalar_broadcast(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        s = Tensor([[2.0]])
        np.testing.assert_array_equal(T.mul(x, s).values, [[2, 4], [6, 8]])
        loss = T.sum_all(T.mul(x, s))
        T.backward(loss)
        assert s.grad[0, 0] == pytest.approx(10.0)

    def test_elementwise_gradchecks(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(3, 3)))
        y = Tensor(rng.normal(size=(3, 3)))
        params = [("x", x), ("y", y)]
        gradcheck(lambda: T.sum_all(T.mul(x, y)), params)
        gradcheck(lambda: T.sum_all(T.sub(x, y)), params)
        gradcheck(lambda: T.sum_all(T.square(T.add(x, y))), params)
        gradcheck(lambda: T.sum_all(T.softplus(x)), [("x", x)])
        gradcheck(lambda: T.sum_all(T.relu(x)), [("x", x)])
        gradcheck(lambda: T.sum_all(T.scale(x, -2.5)), [("x", x)])
        gradcheck(lambda: T.sum_all(T.negate(x)), [("x", x)])


class TestConcatCols:
    def test_two_columns(self):
        out = T.concat_cols([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])])
        np.testing.assert_array_equal(out.values, [[1, 3], [2, 4]])

    def test_single_tensor_identity(self):
        x = Tensor([[1.0, 2.0]])
        np.testing.assert_array_equal(T.concat_cols([x]).values, x.values)

    def test_backward_all_ones(self):
        a, b = Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3)))
        T.backward(T.sum_all(T.concat_cols([a, b])))
        np.testing.assert_array_equal(a.grad, np.ones((2, 2)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 3)))

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_cols([Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1)))])

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(3, 2)))
        b = Tensor(rng.normal(size=(3, 4)))
        gradcheck(lambda: T.sum_all(T.square(T.concat_cols([a, b]))),
                  [("a", a), ("b", b)])


class TestSegmentSum:
    def test_basic(self):
        out = T.segment_sum(Tensor([[1.0], [2.0], [3.0]]), [0, 0, 1], 2)
        np.testing.assert_array_equal(out.values, [[3.0], [3.0]])

    def test_all_distinct_is_identity(self):
        x = Tensor(np.arange(12.0).reshape(4, 3))
        out = T.segment_sum(x, [0, 1, 2, 3], 4)
        np.testing.assert_array_equal(out.values, x.values)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(20, 4))
        seg = rng.integers(0, 6, size=20)
        out = T.segment_sum(Tensor(x), seg, 6)
        np.testing.assert_allclose(out.values, segment_sum_loop(x, seg, 6),
                                   atol=0, rtol=0)

    def test_total_mass_preserved(self):
        rng = np.random.default_rng(6)
        # Integer-valued floats add exactly in any order: bitwise equality.
        x_int = rng.integers(-50, 50, size=(15, 3)).astype(np.float64)
        seg = rng.integers(0, 4, size=15)
        out = T.segment_sum(Tensor(x_int), seg, 4)
        np.testing.assert_array_equal(out.values.sum(axis=0), x_int.sum(axis=0))
        x = rng.normal(size=(15, 3))
        out = T.segment_sum(Tensor(x), seg, 4)
        np.testing.assert_allclose(out.values.sum(axis=0), x.sum(axis=0),
                                   rtol=1e-12)

    def test_empty_segment_is_zero_row(self):
        out = T.segment_sum(Tensor([[1.0]]), [2], 3)
        np.testing.assert_array_equal(out.values, [[0.0], [0.0], [1.0]])

    def test_out_of_range_raises_index_error(self):
        with pytest.raises(IndexError):
            T.segment_sum(Tensor([[1.0]]), [5], 2)

    def test_gradcheck(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(8, 3)))
        seg = rng.integers(0, 3, size=8)
        gradcheck(lambda: T.sum_all(T.square(T.segment_sum(x, seg, 3))),
                  [("x", x)])


class TestGatherAndFriends:
    def test_gather_rows_forward(self):
        x = Tensor(np.arange(6.0).reshape(3, 2))
        out = T.gather_rows(x, [2, 0, 2])
        np.testing.assert_array_equal(out.values, [[4, 5], [0, 1], [4, 5]])

    def test_gather_rows_duplicate_index_gradcheck(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(4, 3)))
        idx = np.array([0, 2, 2, 3, 0])
        gradcheck(lambda: T.sum_all(T.square(T.gather_rows(x, idx))), [("x", x)])

    def test_gather_rows_out_of_range(self):
        with pytest.raises(IndexError):
            T.gather_rows(Tensor(np.ones((2, 2))), [0, 2])

    def test_add_bias_gradcheck(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(5, 3)))
        b = Tensor(rng.normal(size=(1, 3)))
        gradcheck(lambda: T.sum_all(T.square(T.add_bias(x, b))),
                  [("x", x), ("b", b)])

    def test_add_bias_shape(self):
        with pytest.raises(ShapeError):
            T.add_bias(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 2))))

    def test_transpose_gradcheck(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(3, 5)))
        gradcheck(lambda: T.sum_all(T.square(T.transpose(x))), [("x", x)])


class TestBackward:
    def test_square_gradient(self):
        x = Tensor([[3.0]])
        T.backward(T.square(x))
        assert x.grad[0, 0] == pytest.approx(6.0)

    def test_accumulation_without_zeroing_doubles(self):
        x = Tensor([[3.0]])
        loss = T.square(x)
        T.backward(loss)
        first = x.grad.copy()
        loss2 = T.square(x)
        T.backward(loss2)
        np.testing.assert_array_equal(x.grad, 2 * first)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            T.backward(Tensor(np.ones((2, 2))))

    def test_diamond_graph_counts_both_paths(self):
        x = Tensor([[2.0]])
        y = T.add(T.square(x), T.scale(x, 3.0))  # x^2 + 3x -> dy/dx = 2x + 3
        T.backward(y)
        assert x.grad[0, 0] == pytest.approx(7.0)

    def test_bitwise_reproducible_with_zeroing(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(6, 4)))
        w = Tensor(rng.normal(size=(4, 3)))
        params = [("x", x), ("w", w)]

        def run():
            T.zero_grads(params)
            loss = T.sum_all(T.softplus(T.matmul(x, w)))
            T.backward(loss)
            return x.grad.copy(), w.grad.copy()

        gx1, gw1 = run()
        gx2, gw2 = run()
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)

    def test_zero_grads_leaves_exact_zeros(self):
        x = Tensor([[3.0]])
        T.backward(T.square(x))
        T.zero_grads([("x", x)])
        np.testing.assert_array_equal(x.grad, [[0.0]])


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = Tensor([[1.0, -2.0]])
        p.grad = np.array([[0.5, -0.25]])
        params = [("p", p)]
        state = AdamState.for_params(params)
        before = p.values.copy()
        adam_step(params, state, lr=0.01)
        delta = p.values - before
        expected = -0.01 * p.grad / (np.abs(p.grad) + state.eps)
        np.testing.assert_allclose(delta, expected, rtol=1e-12)

    def test_zero_gradient_leaves_params(self):
        p = Tensor([[1.0, 2.0]])
        p.grad = np.zeros((1, 2))
        params = [("p", p)]
        state = AdamState.for_params(params)
        adam_step(params, state, lr=0.1)
        np.testing.assert_array_equal(p.values, [[1.0, 2.0]])
        assert state.t == 1

    def test_quadratic_descent_matches_scalar_recurrence(self):
        p = Tensor([[5.0]])
        params = [("p", p)]
        state = AdamState.for_params(params)
        for _ in range(100):
            T.zero_grads(params)
            T.backward(T.square(p))
            adam_step(params, state, lr=0.1)
        assert abs(p.item()) < 0.5
        reference = adam_scalar_recurrence(5.0, lambda x: 2 * x, lr=0.1, steps=100)
        assert p.item() == pytest.approx(reference, abs=1e-12)

    def test_step_counter_increments_by_one(self):
        p = Tensor([[1.0]])
        p.grad = np.array([[1.0]])
        params = [("p", p)]
        state = AdamState.for_params(params)
        for expected in (1, 2, 3):
            adam_step(params, state, lr=0.01)
            assert state.t == expected

    def test_non_finite_gradient_names_parameter(self):
        p = Tensor([[1.0]])
        p.grad = np.array([[np.nan]])
        state = AdamState.for_params([("enc.w1", p)])
        with pytest.raises(NumericError, match="enc.w1"):
            adam_step([("enc.w1", p)], state, lr=0.01)


class TestGlorot:
    def test_bounds_and_determinism(self):
        rng1 = np.random.default_rng(42)
        rng2 = np.random.default_rng(42)
        w1 = T.glorot(20, 30, rng1)
        w2 = T.glorot(20, 30, rng2)
        bound = math.sqrt(6.0 / 50)
        assert np.all(np.abs(w1.values) <= bound)
        np.testing.assert_array_equal(w1.values, w2.values)
