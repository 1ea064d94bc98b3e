"""
Tests for the reverse-mode tape, its ops and the dense layers built on it.
"""

import numpy as np
import pytest

from lodl_bench.errors import DomainError, NumericalError, ShapeError, TapeError
from lodl_bench.gradcore import DenseStack, Tape, Tensor, finite_diff_check, no_record, ops


class TestTape:
    """Recording and replaying a computation."""

    def test_sum_of_squares_gradient(self):
        with Tape() as tape:
            x = tape.watch(np.array([1.0, -2.0, 3.0]))
            root = ops.sum(ops.square(x))
            grads = tape.backward(root)
        np.testing.assert_array_equal(grads[x].data, [2.0, -4.0, 6.0])

    def test_shared_input_accumulates(self):
        with Tape() as tape:
            x = tape.watch(np.array(2.0))
            root = ops.add(ops.mul(x, x), x)
            grads = tape.backward(root)
        assert grads.wrt(x).item() == pytest.approx(5.0)

    def test_unused_leaf_gets_zero_gradient(self):
        with Tape() as tape:
            x = tape.watch(np.ones(3))
            y = tape.watch(np.ones(2))
            grads = tape.backward(ops.sum(x))
        np.testing.assert_array_equal(grads[y].data, np.zeros(2))

    def test_backward_twice_fails(self):
        with Tape() as tape:
            x = tape.watch(np.ones(2))
            root = ops.sum(x)
            tape.backward(root)
            with pytest.raises(TapeError):
                tape.backward(root)

    def test_non_scalar_root_fails(self):
        with Tape() as tape:
            x = tape.watch(np.ones(2))
            with pytest.raises(TapeError):
                tape.backward(ops.mul(x, 2.0))

    def test_consumed_tape_rejects_new_leaves(self):
        with Tape() as tape:
            x = tape.watch(np.ones(2))
            tape.backward(ops.sum(x))
            with pytest.raises(TapeError):
                tape.watch(np.ones(2))

    def test_no_record_leaves_results_unlinked(self):
        with Tape() as tape:
            x = tape.watch(np.ones(2))
            with no_record():
                y = ops.mul(x, 3.0)
        assert y.node_id is None
        np.testing.assert_array_equal(y.data, [3.0, 3.0])

    def test_ops_without_tape_are_plain_values(self):
        out = ops.add(np.ones(2), 1.0)
        assert out.node_id is None
        np.testing.assert_array_equal(out.numpy(), [2.0, 2.0])

    def test_inner_tape_is_independent(self):
        with Tape() as outer:
            a = outer.watch(np.array(3.0))
            with Tape() as inner:
                b = inner.watch(np.array(2.0))
                inner_grads = inner.backward(ops.square(b))
            outer_grads = outer.backward(ops.square(a))
        assert inner_grads[b].item() == pytest.approx(4.0)
        assert outer_grads[a].item() == pytest.approx(6.0)

    def test_tensors_are_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0


class TestOpErrors:
    """Shape and domain violations raise typed errors."""

    def test_mismatched_add(self):
        with pytest.raises(ShapeError):
            ops.add(np.ones(2), np.ones(3))

    def test_bad_matmul(self):
        with pytest.raises(ShapeError):
            ops.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_log_of_zero(self):
        with pytest.raises(DomainError):
            ops.log(np.array([1.0, 0.0]))

    def test_divide_by_zero(self):
        with pytest.raises(DomainError):
            ops.div(np.ones(2), np.array([1.0, 0.0]))

    def test_overflow_is_numerical_error(self):
        with pytest.raises(NumericalError):
            ops.exp(np.array([1000.0]))

    def test_bad_reshape(self):
        with pytest.raises(ShapeError):
            ops.reshape(np.ones(6), (4, 2))

    def test_stack_needs_equal_shapes(self):
        with pytest.raises(ShapeError):
            ops.stack([np.ones(2), np.ones(3)])


class TestGradientsAgainstFiniteDifferences:
    """Every op's backward rule matches central differences."""

    def test_smooth_elementwise_chain(self):
        def f(x):
            return ops.sum(ops.mul(ops.tanh(x), ops.sigmoid(ops.mul(x, 2.0))))
        assert finite_diff_check(f, np.array([0.3, -0.7, 1.1])) < 1e-6

    def test_exp_log_div(self):
        def f(x):
            return ops.sum(ops.div(ops.log(ops.add(ops.exp(x), 1.0)), ops.add(ops.square(x), 1.0)))
        assert finite_diff_check(f, np.array([0.5, -1.5])) < 1e-6

    def test_matmul_both_sides(self):
        weights = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]])

        def left(x):
            return ops.sum(ops.square(ops.matmul(ops.reshape(x, (2, 3)), weights)))

        def right(w):
            return ops.sum(ops.square(ops.matmul(np.ones((2, 3)), ops.reshape(w, (3, 2)))))

        assert finite_diff_check(left, np.linspace(-1.0, 1.0, 6)) < 1e-6
        assert finite_diff_check(right, weights.reshape(-1)) < 1e-6

    def test_reductions_with_axis(self):
        def f(x):
            m = ops.reshape(x, (2, 3))
            return ops.add(ops.sum(ops.square(ops.mean(m, axis=0))), ops.sum(ops.square(ops.sum(m, axis=1))))
        assert finite_diff_check(f, np.array([0.1, 0.2, -0.3, 0.4, 1.5, -0.6])) < 1e-6

    def test_take_stack_transpose(self):
        def f(x):
            m = ops.reshape(x, (2, 3))
            picked = ops.take(m, [0, 2], axis=1)
            stacked = ops.stack([ops.take(m, 0), ops.take(m, 1)])
            return ops.add(ops.sum(ops.square(ops.transpose(picked))), ops.sum(ops.mul(stacked, stacked)))
        assert finite_diff_check(f, np.array([0.3, -0.2, 0.9, 1.1, -0.4, 0.5])) < 1e-6

    def test_relu_and_clamps_away_from_kinks(self):
        def f(x):
            return ops.sum(ops.add(ops.relu(x), ops.square(ops.clamp(x, -0.5, 0.5))))
        assert finite_diff_check(f, np.array([-1.0, -0.2, 0.3, 0.8])) < 1e-6

    def test_logsumexp_rows(self):
        def f(x):
            return ops.sum(ops.logsumexp(ops.reshape(x, (2, 3)), axis=1))
        assert finite_diff_check(f, np.array([1.0, 2.0, 3.0, -1.0, 0.0, 5.0])) < 1e-6

    def test_broadcast_row_vector(self):
        def f(b):
            return ops.sum(ops.square(ops.add(np.ones((3, 2)), b)))
        assert finite_diff_check(f, np.array([0.5, -0.5])) < 1e-6


class TestClampGradient:

    def test_zero_below_floor(self):
        with Tape() as tape:
            x = tape.watch(np.array([-1.0, 2.0]))
            grads = tape.backward(ops.sum(ops.clamp_min(x, 0.0)))
        np.testing.assert_array_equal(grads[x].data, [0.0, 1.0])


class TestDenseStack:
    """Dense layers used by models and the NN loss."""

    def test_flat_round_trip(self, rng):
        stack = DenseStack.create([3, 4, 2], rng)
        rebuilt = DenseStack.from_flat(stack.sizes, stack.flat())
        assert rebuilt.sizes == [3, 4, 2]
        np.testing.assert_array_equal(rebuilt.flat(), stack.flat())

    def test_from_flat_rejects_wrong_length(self, rng):
        stack = DenseStack.create([3, 2], rng)
        with pytest.raises(ValueError):
            DenseStack.from_flat([3, 2], stack.flat()[:-1])

    def test_forward_gradient(self, rng):
        stack = DenseStack.create([2, 3, 1], rng, tanh_output=True)
        batch = np.array([[0.2, -0.4], [1.0, 0.5]])

        def f(w0):
            params = dict(stack.arrays())
            params["w0"] = ops.reshape(w0, (2, 3))
            return ops.sum(stack.forward(batch, params))

        assert finite_diff_check(f, stack.weights[0].reshape(-1)) < 1e-6

    def test_apply_update_moves_against_gradient(self, rng):
        stack = DenseStack.create([2, 1], rng)
        grads = {"w0": np.ones((2, 1)), "b0": np.ones(1)}
        moved = stack.apply_update(grads, 0.5)
        np.testing.assert_allclose(moved.weights[0], stack.weights[0] - 0.5)
        np.testing.assert_allclose(moved.biases[0], stack.biases[0] - 0.5)
