import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnet.autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    clamp,
    concat,
    exp,
    log,
    matmul,
    mul,
    pad_width,
    reduce_max_axis,
    relu,
    slice_axis,
    sqrt,
    sub,
    sum_all,
    sum_axis,
)
from oracles import finite_difference_check


class TestConstruction:
    def test_shape_and_data(self):
        t = Tensor([1.0, 2.0, 3.0, 4.0], shape=[2, 2])
        assert t.shape == (2, 2)
        assert np.array_equal(t.data, [[1.0, 2.0], [3.0, 4.0]])
        assert t.grad is None

    def test_zero_vector(self):
        t = Tensor([0.0, 0.0, 0.0], shape=[3])
        assert np.array_equal(t.data, np.zeros(3))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            Tensor([1.0, 2.0, 3.0], shape=[2])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Tensor([1.0, np.nan])
        with pytest.raises(ValueError, match="finite"):
            Tensor([np.inf])

    def test_non_positive_dimension_rejected(self):
        with pytest.raises(ValueError):
            Tensor([], shape=[0])


class TestElementwise:
    def test_add(self):
        assert np.array_equal(add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])

    def test_mul_annihilator(self):
        assert np.array_equal(mul(Tensor([1.0, 2.0]), Tensor([0.0, 0.0])).data, [0.0, 0.0])

    def test_mul_backward_product_rule(self):
        a = Tensor([2.0, 3.0], requires_grad=True)
        b = Tensor([4.0, 5.0], requires_grad=True)
        with Tape():
            y = sum_all(mul(a, b))
        grads = y.backward()
        assert np.array_equal(grads[a], [4.0, 5.0])
        assert np.array_equal(grads[b], [2.0, 3.0])

    def test_incompatible_shapes(self):
        with pytest.raises(ValueError, match="incompatible"):
            add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_scalar_right_operand(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = sum_all(mul(a, 3.0))
        grads = y.backward()
        assert np.array_equal(y.data, 9.0)
        assert np.array_equal(grads[a], [3.0, 3.0])


class TestMatmul:
    def test_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = Tensor(np.eye(2))
        assert np.array_equal(matmul(eye, m).data, m.data)

    def test_dot(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert np.array_equal(out.data, [[11.0]])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="inner"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestRelu:
    def test_forward(self):
        assert np.array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_positive_identity(self):
        x = np.array([0.5, 1.0, 7.0])
        assert np.array_equal(relu(Tensor(x)).data, x)

    def test_backward_gate_zero_at_origin(self):
        a = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        with Tape():
            y = sum_all(relu(a))
        grads = y.backward()
        assert np.array_equal(grads[a], [0.0, 0.0, 1.0])


class TestReduceMax:
    def test_values_and_argmax(self):
        values, idx = reduce_max_axis(Tensor([[1.0, 5.0], [7.0, 2.0]]), axis=1)
        assert np.array_equal(values.data, [5.0, 7.0])
        assert np.array_equal(idx, [1, 0])

    def test_tie_breaks_to_lowest_index(self):
        values, idx = reduce_max_axis(Tensor([[3.0, 3.0, 3.0]]), axis=1)
        assert np.array_equal(values.data, [3.0])
        assert np.array_equal(idx, [0])

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError, match="axis"):
            reduce_max_axis(Tensor([1.0, 2.0, 3.0]), axis=2)

    def test_backward_routes_all_mass_to_argmax(self):
        a = Tensor([[1.0, 5.0, 2.0], [7.0, 2.0, 3.0]], requires_grad=True)
        with Tape():
            values, idx = reduce_max_axis(a, axis=1)
            y = sum_all(mul(values, Tensor([2.0, 3.0])))
        grads = y.backward()
        expected = np.zeros((2, 3))
        expected[0, 1] = 2.0
        expected[1, 0] = 3.0
        assert np.array_equal(grads[a], expected)
        assert grads[a].sum() == 5.0


class TestShapeOps:
    def test_concat_axis1(self):
        out = concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1)
        assert out.shape == (2, 2)
        assert np.array_equal(out.data, [[1.0, 3.0], [2.0, 4.0]])

    def test_pad_width(self):
        assert np.array_equal(pad_width(Tensor([1.0, 2.0]), 1, 1, 0.0).data, [0.0, 1.0, 2.0, 0.0])

    def test_slice_of_concat_roundtrip(self):
        a = np.arange(6.0).reshape(2, 3)
        b = np.arange(6.0, 14.0).reshape(2, 4)
        joined = concat([Tensor(a), Tensor(b)], axis=1)
        back = slice_axis(joined, axis=1, start=0, length=3)
        assert np.array_equal(back.data, a)

    def test_concat_shape_mismatch(self):
        with pytest.raises(ValueError, match="differ off axis"):
            concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))], axis=1)

    def test_slice_out_of_bounds(self):
        with pytest.raises(ValueError, match="out of bounds"):
            slice_axis(Tensor(np.ones((2, 3))), axis=1, start=2, length=2)


class TestScalarFunctions:
    def test_log_requires_positive(self):
        with pytest.raises(ValueError, match="positive"):
            log(Tensor([1.0, 0.0]))

    def test_exp_log_roundtrip(self):
        x = np.array([0.5, 1.5, 2.5])
        assert np.allclose(log(exp(Tensor(x))).data, x, rtol=0, atol=1e-12)

    def test_sqrt_at_zero_has_zero_subgradient(self):
        a = Tensor([0.0, 4.0], requires_grad=True)
        with Tape():
            y = sum_all(sqrt(a))
        grads = y.backward()
        assert np.array_equal(grads[a], [0.0, 0.25])

    def test_clamp_gates_gradient(self):
        a = Tensor([0.5, 2.0, -1.0], requires_grad=True)
        with Tape():
            y = sum_all(clamp(a, 0.0, 1.0))
        grads = y.backward()
        assert np.array_equal(y.data, 0.5 + 1.0 + 0.0)
        assert np.array_equal(grads[a], [1.0, 0.0, 0.0])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape():
            y = sum_all(x)
        grads = y.backward()
        assert np.array_equal(grads[x], [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape():
            y = sum_all(mul(x, x))
        grads = y.backward()
        assert np.array_equal(grads[x], [4.0])

    def test_fanout_accumulates_both_paths(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c1 = Tensor([3.0, 3.0])
        c2 = Tensor([5.0, 5.0])
        with Tape():
            y = sum_all(add(mul(x, c1), mul(x, c2)))
        grads = y.backward()
        assert np.array_equal(grads[x], [8.0, 8.0])

    def test_non_scalar_output_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape():
            y = mul(x, x)
        with pytest.raises(ValueError, match="scalar"):
            backward(y)

    def test_second_backward_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape():
            y = sum_all(x)
        y.backward()
        with pytest.raises(RuntimeError, match="already"):
            y.backward()

    def test_backward_without_tape_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        y = sum_all(x)  # no active tape: nothing recorded
        with pytest.raises(RuntimeError, match="tape"):
            backward(y)

    def test_empty_tape_rejected(self):
        with Tape() as tape:
            pass
        with pytest.raises(RuntimeError, match="empty"):
            tape.backward(Tensor([1.0]))

    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 2))

        def run():
            x = Tensor(data, requires_grad=True)
            weights = Tensor(w, requires_grad=True)
            with Tape():
                y = sum_all(relu(matmul(x, weights)))
            grads = y.backward()
            return y.data.copy(), grads[x].copy(), grads[weights].copy()

        first = run()
        second = run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)


def _random_shape(rng):
    rank = int(rng.integers(1, 4))
    maxes = [4, 8, 16]
    return tuple(int(rng.integers(1, maxes[i] + 1)) for i in range(rank))


def _away_from_kinks(rng, shape, gap=5e-3):
    """Uniform data resampled so no element sits within `gap` of zero."""
    data = rng.uniform(-2.0, 2.0, size=shape)
    mask = np.abs(data) < gap
    while mask.any():
        data[mask] = rng.uniform(-2.0, 2.0, size=int(mask.sum()))
        mask = np.abs(data) < gap
    return data


def _weigher(rng, shape):
    """Fixed random projection to a scalar, so probes exercise every output."""
    weights = Tensor(rng.normal(size=shape))
    return lambda t: sum_all(mul(t, weights))


class TestFiniteDifferences:
    """Every primitive op's analytic gradient vs central differences."""

    N_INSTANCES = 50

    @pytest.mark.parametrize("op_name", ["add", "sub", "mul"])
    def test_binary_elementwise(self, op_name):
        op = {"add": add, "sub": sub, "mul": mul}[op_name]
        rng = np.random.default_rng(hash(op_name) % 2**32)
        for _ in range(self.N_INSTANCES):
            shape = _random_shape(rng)
            a = Tensor(rng.normal(size=shape), requires_grad=True)
            b = Tensor(rng.normal(size=shape), requires_grad=True)
            weigh = _weigher(rng, shape)
            finite_difference_check(lambda: weigh(op(a, b)), [a, b])

    def test_matmul(self):
        rng = np.random.default_rng(11)
        for _ in range(self.N_INSTANCES):
            m, k, n = (int(rng.integers(1, 6)) for _ in range(3))
            a = Tensor(rng.normal(size=(m, k)), requires_grad=True)
            b = Tensor(rng.normal(size=(k, n)), requires_grad=True)
            weigh = _weigher(rng, (m, n))
            finite_difference_check(lambda: weigh(matmul(a, b)), [a, b])

    def test_relu(self):
        rng = np.random.default_rng(12)
        for _ in range(self.N_INSTANCES):
            shape = _random_shape(rng)
            a = Tensor(_away_from_kinks(rng, shape), requires_grad=True)
            weigh = _weigher(rng, shape)
            finite_difference_check(lambda: weigh(relu(a)), [a])

    def test_exp_log_sqrt(self):
        rng = np.random.default_rng(13)
        for _ in range(self.N_INSTANCES):
            shape = _random_shape(rng)
            a = Tensor(rng.uniform(0.5, 2.0, size=shape), requires_grad=True)
            weigh = _weigher(rng, shape)
            finite_difference_check(lambda: weigh(exp(a)), [a])
            finite_difference_check(lambda: weigh(log(a)), [a])
            finite_difference_check(lambda: weigh(sqrt(a)), [a])

    def test_sum_ops(self):
        rng = np.random.default_rng(14)
        for _ in range(self.N_INSTANCES):
            shape = _random_shape(rng)
            a = Tensor(rng.normal(size=shape), requires_grad=True)
            axis = int(rng.integers(0, len(shape)))
            out_shape = tuple(d for i, d in enumerate(shape) if i != axis)
            weigh = _weigher(rng, out_shape)
            finite_difference_check(lambda: weigh(sum_axis(a, axis)), [a])

    def test_reduce_max(self):
        rng = np.random.default_rng(15)
        count = 0
        while count < self.N_INSTANCES:
            shape = _random_shape(rng)
            data = rng.normal(size=shape)
            axis = int(rng.integers(0, len(shape)))
            # Keep the argmax stable across the +/- eps probes.
            sorted_vals = np.sort(data, axis=axis)
            if sorted_vals.shape[axis] > 1:
                gaps = np.diff(sorted_vals, axis=axis)
                if gaps.min() < 5e-3:
                    continue
            a = Tensor(data, requires_grad=True)
            out_shape = tuple(d for i, d in enumerate(shape) if i != axis)
            weigh = _weigher(rng, out_shape)

            def build():
                values, _ = reduce_max_axis(a, axis)
                return weigh(values)

            finite_difference_check(build, [a])
            count += 1

    def test_concat_slice_pad(self):
        rng = np.random.default_rng(16)
        for _ in range(self.N_INSTANCES):
            a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
            weigh = _weigher(rng, (2, 6))

            def build():
                joined = concat([a, b], axis=1)
                sliced = slice_axis(joined, axis=1, start=1, length=3)
                padded = pad_width(sliced, 1, 2, 0.0)
                return weigh(padded)

            finite_difference_check(build, [a, b])


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-50, max_value=50, allow_nan=False),
        min_size=2,
        max_size=12,
    )
)
def test_finite_inputs_stay_finite_through_composed_graph(values):
    """No op introduces NaN or Inf on finite, moderate inputs."""
    x = Tensor(values, requires_grad=True)
    with Tape():
        y = relu(x)
        z = add(mul(y, y), 1.0)
        out = sum_all(mul(log(z), sqrt(z)))
    assert np.isfinite(out.data)
    grads = out.backward()
    assert np.all(np.isfinite(grads[x]))
