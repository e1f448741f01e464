import numpy as np
import pytest

from snnet.autodiff import Tape, Tensor, mul, sum_all
from snnet.layers import (
    ActivationMap,
    ConvSpec,
    InceptionBlock,
    conv_color,
    conv_temporal,
    dense,
    dropout,
    global_max_pool,
    inception_forward,
    maxpool_temporal,
    softmax,
)
from oracles import (
    conv_color_oracle,
    conv_temporal_oracle,
    finite_difference_check,
    maxpool3_oracle,
)


def amap(data, valid=None, requires_grad=False):
    data = np.asarray(data, dtype=np.float64)
    if valid is None:
        valid = np.full(data.shape[0], data.shape[3], dtype=np.int64)
    return ActivationMap(Tensor(data, requires_grad=requires_grad), valid)


def row_map(values, requires_grad=False):
    """Single-example, single-channel, single-row activation map."""
    arr = np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1)
    return amap(arr, requires_grad=requires_grad)


def conv_spec(weights, bias=None, stride=1):
    weights = np.asarray(weights, dtype=np.float64)
    if bias is None:
        bias = np.zeros(weights.shape[0])
    return ConvSpec(Tensor(weights), Tensor(bias), stride_w=stride)


class TestConvTemporal:
    def test_identity_kernel(self):
        out = conv_temporal(row_map([1.0, 2.0, 3.0, 4.0]), conv_spec([[[[0.0, 1.0, 0.0]]]]))
        assert np.array_equal(out.tensor.data.ravel(), [1.0, 2.0, 3.0, 4.0])

    def test_box_kernel_same_padding(self):
        out = conv_temporal(row_map([1.0, 2.0, 3.0, 4.0]), conv_spec([[[[1.0, 1.0, 1.0]]]]))
        assert np.array_equal(out.tensor.data.ravel(), [3.0, 6.0, 9.0, 7.0])

    def test_box_kernel_stride_two(self):
        out = conv_temporal(
            row_map([1.0, 2.0, 3.0, 4.0]), conv_spec([[[[1.0, 1.0, 1.0]]]], stride=2)
        )
        assert out.tensor.shape[3] == 2
        assert np.array_equal(out.tensor.data.ravel(), [3.0, 9.0])
        assert np.array_equal(out.valid_w, [2])

    def test_channel_mismatch(self):
        x = amap(np.ones((1, 2, 1, 4)))
        with pytest.raises(ValueError, match="channel mismatch"):
            conv_temporal(x, conv_spec(np.ones((1, 3, 1, 1))))

    def test_bit_exact_against_nested_loop_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            b = int(rng.integers(1, 3))
            cin = int(rng.integers(1, 9))
            cout = int(rng.integers(1, 9))
            h = int(rng.integers(1, 5))
            w = int(rng.integers(2, 33))
            kw = int(rng.choice([1, 3, 5]))
            stride = int(rng.choice([1, 2]))
            x_data = rng.normal(size=(b, cin, h, w))
            valid = rng.integers(1, w + 1, size=b)
            for i in range(b):
                x_data[i, :, :, valid[i] :] = 0.0
            weights = rng.normal(size=(cout, cin, 1, kw))
            bias = rng.normal(size=cout)
            got = conv_temporal(
                amap(x_data, valid), conv_spec(weights, bias, stride=stride)
            )
            want, want_valid = conv_temporal_oracle(x_data, weights, bias, stride, valid)
            assert np.array_equal(got.tensor.data, want)
            assert np.array_equal(got.valid_w, want_valid)


class TestConvColor:
    def test_column_sum(self):
        x = amap(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4, 1))
        spec = conv_spec(np.ones((1, 1, 4, 1)))
        out = conv_color(x, spec)
        assert out.tensor.shape == (1, 1, 1, 1)
        assert out.tensor.data.ravel()[0] == 10.0

    def test_band_selector(self):
        x = amap(np.arange(8.0).reshape(1, 1, 4, 2))
        weights = np.zeros((1, 1, 4, 1))
        weights[0, 0, 0, 0] = 1.0
        out = conv_color(x, conv_spec(weights))
        assert np.array_equal(out.tensor.data.ravel(), x.tensor.data[0, 0, 0])

    def test_wrong_height_rejected(self):
        x = amap(np.ones((1, 1, 1, 3)))
        with pytest.raises(ValueError, match="height 4"):
            conv_color(x, conv_spec(np.ones((1, 1, 4, 1))))

    def test_preserves_width_and_valid(self):
        x = amap(np.random.default_rng(0).normal(size=(2, 3, 4, 9)), valid=[5, 9])
        out = conv_color(x, conv_spec(np.random.default_rng(1).normal(size=(2, 3, 4, 1))))
        assert out.tensor.shape == (2, 2, 1, 9)
        assert np.array_equal(out.valid_w, [5, 9])

    def test_bit_exact_against_nested_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            b = int(rng.integers(1, 3))
            cin = int(rng.integers(1, 9))
            cout = int(rng.integers(1, 9))
            w = int(rng.integers(1, 33))
            x_data = rng.normal(size=(b, cin, 4, w))
            valid = rng.integers(1, w + 1, size=b)
            for i in range(b):
                x_data[i, :, :, valid[i] :] = 0.0
            weights = rng.normal(size=(cout, cin, 4, 1))
            bias = rng.normal(size=cout)
            got = conv_color(amap(x_data, valid), conv_spec(weights, bias))
            want = conv_color_oracle(x_data, weights, bias, valid)
            assert np.array_equal(got.tensor.data, want)


class TestMaxPool:
    def test_sliding_max_stride_one(self):
        out = maxpool_temporal(row_map([1.0, 3.0, 2.0, 5.0]), stride_w=1)
        assert np.array_equal(out.tensor.data.ravel(), [3.0, 3.0, 5.0, 5.0])

    def test_constant_row(self):
        out = maxpool_temporal(row_map([2.0, 2.0, 2.0]), stride_w=1)
        assert np.array_equal(out.tensor.data.ravel(), [2.0, 2.0, 2.0])

    def test_stride_two(self):
        out = maxpool_temporal(row_map([1.0, 3.0, 2.0, 5.0]), stride_w=2)
        assert np.array_equal(out.tensor.data.ravel(), [3.0, 5.0])

    def test_pad_cells_excluded_not_zero_filled(self):
        # All-negative row: zero-padding semantics would leak 0 into the edge windows.
        out = maxpool_temporal(row_map([-5.0, -3.0, -4.0]), stride_w=1)
        assert np.array_equal(out.tensor.data.ravel(), [-3.0, -3.0, -3.0])

    def test_matches_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            b = int(rng.integers(1, 3))
            c = int(rng.integers(1, 5))
            h = int(rng.integers(1, 5))
            w = int(rng.integers(1, 25))
            stride = int(rng.choice([1, 2]))
            data = rng.normal(size=(b, c, h, w))
            valid = rng.integers(1, w + 1, size=b)
            got = maxpool_temporal(amap(data, valid), stride_w=stride)
            want, want_valid = maxpool3_oracle(data, stride, valid)
            assert np.array_equal(got.tensor.data, want)
            assert np.array_equal(got.valid_w, want_valid)

    def test_gradient_routes_to_lowest_tied_argmax(self):
        x = row_map([2.0, 2.0, 1.0], requires_grad=True)
        with Tape():
            out = maxpool_temporal(x, stride_w=1)
            y = sum_all(out.tensor)
        grads = y.backward()
        # windows: [2,2]->idx0, [2,2,1]->idx0, [2,1]->idx1
        assert np.array_equal(grads[x.tensor].ravel(), [2.0, 1.0, 0.0])


class TestInception:
    @staticmethod
    def _identity_block(channels, stride=1):
        """1x1 branch passes the input through; other branches contribute zero."""
        eye = np.eye(channels)[:, :, None, None]
        zeros1 = np.zeros((channels, channels, 1, 1))
        zeros3 = np.zeros((channels, channels, 1, 3))
        zeros5 = np.zeros((channels, channels, 1, 5))
        return InceptionBlock(
            b1=conv_spec(eye, stride=stride),
            b3_reduce=conv_spec(zeros1),
            b3=conv_spec(zeros3, stride=stride),
            b5_reduce=conv_spec(zeros1),
            b5=conv_spec(zeros5, stride=stride),
            pool_proj=conv_spec(zeros1),
            stride_w=stride,
        )

    def test_selector_configuration_reproduces_relu(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(2, 3, 4, 7))
        out = inception_forward(amap(data), self._identity_block(3))
        assert np.array_equal(out.tensor.data[:, :3], np.maximum(data, 0.0))
        assert np.array_equal(out.tensor.data[:, 3:], np.zeros((2, 9, 4, 7)))

    def test_output_channels_sum(self):
        rng = np.random.default_rng(4)
        block = InceptionBlock(
            b1=conv_spec(rng.normal(size=(5, 6, 1, 1))),
            b3_reduce=conv_spec(rng.normal(size=(2, 6, 1, 1))),
            b3=conv_spec(rng.normal(size=(7, 2, 1, 3))),
            b5_reduce=conv_spec(rng.normal(size=(2, 6, 1, 1))),
            b5=conv_spec(rng.normal(size=(3, 2, 1, 5))),
            pool_proj=conv_spec(rng.normal(size=(4, 6, 1, 1))),
        )
        assert block.out_channels == 5 + 7 + 3 + 4
        out = inception_forward(amap(rng.normal(size=(1, 6, 4, 10))), block)
        assert out.tensor.shape == (1, 19, 4, 10)

    def test_stride_two_width(self):
        rng = np.random.default_rng(5)
        block = InceptionBlock(
            b1=conv_spec(rng.normal(size=(2, 3, 1, 1)), stride=2),
            b3_reduce=conv_spec(rng.normal(size=(2, 3, 1, 1))),
            b3=conv_spec(rng.normal(size=(2, 2, 1, 3)), stride=2),
            b5_reduce=conv_spec(rng.normal(size=(2, 3, 1, 1))),
            b5=conv_spec(rng.normal(size=(2, 2, 1, 5)), stride=2),
            pool_proj=conv_spec(rng.normal(size=(2, 3, 1, 1))),
            stride_w=2,
        )
        out = inception_forward(amap(rng.normal(size=(1, 3, 1, 25))), block)
        assert out.tensor.shape[3] == 13
        assert np.array_equal(out.valid_w, [13])

    def test_stride_one_preserves_width(self):
        rng = np.random.default_rng(6)
        out = inception_forward(amap(rng.normal(size=(1, 4, 4, 11))), self._identity_block(4))
        assert out.tensor.shape[3] == 11


class TestGlobalMaxPool:
    def test_max_over_valid(self):
        out = global_max_pool(row_map([0.1, 0.9, 0.4]))
        assert np.array_equal(out.data, [[0.9]])

    def test_padding_cell_ignored(self):
        x = amap(np.array([0.1, 0.9, 1.5]).reshape(1, 1, 1, 3), valid=[2])
        out = global_max_pool(x)
        assert np.array_equal(out.data, [[0.9]])

    def test_output_dimension_independent_of_duration(self):
        rng = np.random.default_rng(8)
        short = global_max_pool(amap(rng.normal(size=(1, 6, 1, 40))))
        long = global_max_pool(amap(rng.normal(size=(1, 6, 1, 160))))
        assert short.shape == long.shape == (1, 6)

    def test_zero_valid_rejected(self):
        x = amap(np.ones((1, 1, 1, 3)), valid=[0])
        with pytest.raises(ValueError, match="valid_w"):
            global_max_pool(x)

    def test_gradient_mass_routed_to_argmax_only(self):
        data = np.array([[0.5, 2.0], [1.0, -1.0]]).reshape(1, 1, 2, 2)
        x = amap(data, requires_grad=True)
        with Tape():
            y = sum_all(global_max_pool(x))
        grads = y.backward()
        expected = np.zeros((1, 1, 2, 2))
        expected[0, 0, 0, 1] = 1.0
        assert np.array_equal(grads[x.tensor], expected)


class TestHeadOps:
    def test_dense_affine(self):
        x = Tensor([[1.0, 2.0]])
        w = Tensor([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        b = Tensor([0.5, -0.5, 0.0])
        out = dense(x, w, b)
        assert np.array_equal(out.data, [[1.5, 1.5, 3.0]])

    def test_dropout_inference_identity(self):
        x = Tensor([[1.0, 2.0, 3.0]])
        assert dropout(x, 0.4, training=False) is x

    def test_dropout_rate_bounds(self):
        with pytest.raises(ValueError, match="rate"):
            dropout(Tensor([1.0]), 1.0, training=True, rng=np.random.default_rng(0))

    def test_dropout_preserves_expectation(self):
        rng = np.random.default_rng(123)
        x = Tensor(np.full((100_000,), 2.0))
        out = dropout(x, 0.4, training=True, rng=rng)
        kept = out.data[out.data != 0.0]
        assert np.allclose(kept, 2.0 / 0.6)
        assert abs(out.data.mean() - 2.0) / 2.0 < 0.02

    def test_dropout_zeroes_at_given_rate(self):
        rng = np.random.default_rng(7)
        out = dropout(Tensor(np.ones(100_000)), 0.4, training=True, rng=rng)
        frac = np.mean(out.data == 0.0)
        assert abs(frac - 0.4) < 0.01

    def test_softmax_symmetry(self):
        out = softmax(Tensor([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_softmax_hand_value(self):
        out = softmax(Tensor([[np.log(3.0), 0.0]]))
        assert np.allclose(out.data, [[0.75, 0.25]], rtol=0, atol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        out = softmax(Tensor(rng.normal(size=(33, 2), scale=8.0)))
        assert np.allclose(out.data.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def _spread_data(rng, shape, min_gap=6e-3):
    """Values with all pairwise gaps above min_gap so max choices are stable."""
    n = int(np.prod(shape))
    base = np.arange(n, dtype=np.float64) * (min_gap * 4.0)
    rng.shuffle(base)
    return (base + rng.uniform(0, min_gap, size=n)).reshape(shape)


class TestLayerGradients:
    def test_conv_temporal_fd(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            b, cin, cout = 1, int(rng.integers(1, 4)), int(rng.integers(1, 4))
            h, w = int(rng.integers(1, 5)), int(rng.integers(3, 9))
            kw = int(rng.choice([1, 3, 5]))
            stride = int(rng.choice([1, 2]))
            valid = rng.integers(max(1, w - 2), w + 1, size=b)
            x_data = rng.normal(size=(b, cin, h, w))
            for i in range(b):
                x_data[i, :, :, valid[i] :] = 0.0
            x = amap(x_data, valid, requires_grad=True)
            spec = conv_spec(rng.normal(size=(cout, cin, 1, kw)), rng.normal(size=cout), stride)
            spec.weights.requires_grad = True
            spec.bias.requires_grad = True
            w_out = -(-w // stride)
            weigh_arr = Tensor(rng.normal(size=(b, cout, h, w_out)))

            def build():
                return sum_all(mul(conv_temporal(x, spec).tensor, weigh_arr))

            finite_difference_check(build, [x.tensor, spec.weights, spec.bias])

    def test_conv_color_fd(self):
        rng = np.random.default_rng(22)
        for _ in range(25):
            cin, cout, w = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 8))
            x = amap(rng.normal(size=(1, cin, 4, w)), requires_grad=True)
            spec = conv_spec(rng.normal(size=(cout, cin, 4, 1)), rng.normal(size=cout))
            spec.weights.requires_grad = True
            spec.bias.requires_grad = True
            weigh = Tensor(rng.normal(size=(1, cout, 1, w)))

            def build():
                return sum_all(mul(conv_color(x, spec).tensor, weigh))

            finite_difference_check(build, [x.tensor, spec.weights, spec.bias])

    def test_maxpool_fd(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            c, w = int(rng.integers(1, 4)), int(rng.integers(2, 10))
            stride = int(rng.choice([1, 2]))
            x = amap(_spread_data(rng, (1, c, 1, w)), requires_grad=True)
            weigh = Tensor(rng.normal(size=(1, c, 1, -(-w // stride))))

            def build():
                return sum_all(mul(maxpool_temporal(x, stride_w=stride).tensor, weigh))

            finite_difference_check(build, [x.tensor])

    def test_global_max_pool_fd(self):
        rng = np.random.default_rng(24)
        for _ in range(25):
            c, h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 8))
            x = amap(_spread_data(rng, (1, c, h, w)), requires_grad=True)
            weigh = Tensor(rng.normal(size=(1, c)))

            def build():
                return sum_all(mul(global_max_pool(x), weigh))

            finite_difference_check(build, [x.tensor])

    def test_dense_and_softmax_fd(self):
        rng = np.random.default_rng(25)
        for _ in range(25):
            b, n_in, n_out = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(2, 5))
            x = Tensor(rng.normal(size=(b, n_in)), requires_grad=True)
            w = Tensor(rng.normal(size=(n_in, n_out)), requires_grad=True)
            bias = Tensor(rng.normal(size=n_out), requires_grad=True)
            weigh = Tensor(rng.normal(size=(b, n_out)))

            def build():
                return sum_all(mul(softmax(dense(x, w, bias)), weigh))

            finite_difference_check(build, [x, w, bias])


class TestValidWidthInvariance:
    def test_conv_output_identical_after_zero_column_padding(self):
        rng = np.random.default_rng(30)
        data = rng.normal(size=(1, 2, 4, 10))
        spec = conv_spec(rng.normal(size=(3, 2, 1, 3)), rng.normal(size=3))
        plain = conv_temporal(amap(data), spec)
        padded_data = np.concatenate([data, np.zeros((1, 2, 4, 6))], axis=3)
        padded = conv_temporal(amap(padded_data, valid=[10]), spec)
        assert np.array_equal(plain.tensor.data, padded.tensor.data[:, :, :, :10])
        assert np.array_equal(padded.tensor.data[:, :, :, 10:], np.zeros((1, 3, 4, 6)))
