"""Layer tests: oracle equivalence and finite-difference gradient checks.

The convolution oracle is a direct quadruple-nested loop, written
independently of the im2col production path. Gradient checks compare the
hand-written backward passes against 64-bit central differences of a
sum-weighted scalar loss.
"""

import math

import numpy as np
import pytest

from gradcheck import finite_diff, rel_err
from mapseg.errors import ArgumentError, DataError, NumericError, ShapeError
from mapseg.layers import (
    BNParams,
    ConvParams,
    batchnorm_backward,
    batchnorm_forward,
    bn_params,
    conv2d_backward,
    conv2d_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    softmax_channels,
    softmax_cross_entropy,
    upsample2x_backward,
    upsample2x_forward,
)


def conv_oracle(x, w, b, stride, pad):
    """Direct nested-loop convolution, the independent reference."""
    n, c, h, wd = x.shape
    k, _, r1, r2 = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    out_h = (h + 2 * pad - r1) // stride + 1
    out_w = (wd + 2 * pad - r2) // stride + 1
    y = np.zeros((n, k, out_h, out_w), dtype=np.float64)
    for ni in range(n):
        for ki in range(k):
            for p in range(out_h):
                for q in range(out_w):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(r1):
                            for j in range(r2):
                                acc += w[ki, ci, i, j] * xp[ni, ci, p * stride + i, q * stride + j]
                    y[ni, ki, p, q] = acc + b[ki]
    return y


class TestConvForward:
    def test_identity_1x1_kernel(self):
        x = np.random.RandomState(0).randn(1, 1, 4, 4).astype(np.float32)
        p = ConvParams(np.ones((1, 1, 1, 1), dtype=np.float32), np.zeros(1, dtype=np.float32))
        y, _ = conv2d_forward(x, p, stride=1, pad=0)
        np.testing.assert_array_equal(y, x)

    def test_zero_weights_give_bias(self):
        x = np.random.RandomState(1).randn(2, 3, 5, 5).astype(np.float32)
        p = ConvParams(
            np.zeros((4, 3, 3, 3), dtype=np.float32),
            np.array([1.0, -2.0, 0.5, 3.0], dtype=np.float32),
        )
        y, _ = conv2d_forward(x, p, stride=1, pad=1)
        for k in range(4):
            np.testing.assert_array_equal(y[:, k], np.full((2, 5, 5), p.bias[k]))

    def test_hand_example_3x3(self):
        x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
        p = ConvParams(np.ones((1, 1, 2, 2), dtype=np.float32), np.zeros(1, dtype=np.float32))
        y, _ = conv2d_forward(x, p, stride=1, pad=0)
        np.testing.assert_array_equal(y[0, 0], [[12.0, 16.0], [24.0, 28.0]])
        # and the independent oracle agrees
        oracle = conv_oracle(x.astype(np.float64), p.weights, p.bias, 1, 0)
        np.testing.assert_allclose(y, oracle, atol=1e-6)

    @pytest.mark.parametrize(
        "shape,kernels,stride,pad",
        [
            ((1, 1, 5, 5), 2, 1, 0),
            ((2, 3, 7, 6), 4, 1, 1),
            ((2, 4, 16, 16), 8, 1, 1),
            ((1, 2, 9, 9), 3, 2, 1),
            ((2, 2, 8, 8), 5, 3, 2),
        ],
    )
    def test_matches_nested_loop_oracle(self, shape, kernels, stride, pad):
        rs = np.random.RandomState(hash((shape, kernels)) % (2**32))
        x = rs.randn(*shape).astype(np.float32)
        w = rs.randn(kernels, shape[1], 3, 3).astype(np.float32)
        b = rs.randn(kernels).astype(np.float32)
        y, _ = conv2d_forward(x, ConvParams(w, b), stride=stride, pad=pad)
        oracle = conv_oracle(x, w, b, stride, pad)
        assert np.abs(y - oracle).max() <= 1e-5

    def test_large_input_path_matches_im2col_path(self):
        # inputs above the size threshold take the tap-offset GEMM path;
        # both paths must agree (checked in float64 where rounding is moot)
        import mapseg.layers as layers_mod

        rs = np.random.RandomState(30)
        x = rs.randn(2, 8, 40, 40)
        p = ConvParams(rs.randn(6, 8, 3, 3), rs.randn(6))
        assert x.nbytes > layers_mod._SHIFT_MIN_BYTES / 16  # sanity of setup
        saved = layers_mod._SHIFT_MIN_BYTES
        try:
            layers_mod._SHIFT_MIN_BYTES = 1
            y_fast, cache_fast = conv2d_forward(x, p, stride=1, pad=1)
            gy = rs.randn(*y_fast.shape)
            fast = conv2d_backward(gy, cache_fast)
            layers_mod._SHIFT_MIN_BYTES = 1 << 60
            y_ref, cache_ref = conv2d_forward(x, p, stride=1, pad=1)
            ref = conv2d_backward(gy, cache_ref)
        finally:
            layers_mod._SHIFT_MIN_BYTES = saved
        np.testing.assert_allclose(y_fast, y_ref, atol=1e-10)
        for a, b in zip(fast, ref):
            np.testing.assert_allclose(a, b, atol=1e-8)

    def test_channel_mismatch(self):
        x = np.zeros((1, 2, 4, 4), dtype=np.float32)
        p = ConvParams(np.zeros((1, 3, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))
        with pytest.raises(ShapeError):
            conv2d_forward(x, p)

    def test_kernel_too_large(self):
        x = np.zeros((1, 1, 2, 2), dtype=np.float32)
        p = ConvParams(np.zeros((1, 1, 5, 5), dtype=np.float32), np.zeros(1, dtype=np.float32))
        with pytest.raises(ShapeError):
            conv2d_forward(x, p, stride=1, pad=0)


class TestConvBackward:
    def test_zero_grad_gives_zero(self):
        x = np.random.RandomState(2).randn(1, 2, 5, 5).astype(np.float32)
        p = ConvParams(
            np.random.RandomState(3).randn(3, 2, 3, 3).astype(np.float32),
            np.zeros(3, dtype=np.float32),
        )
        y, cache = conv2d_forward(x, p, stride=1, pad=1)
        gx, gw, gb = conv2d_backward(np.zeros_like(y), cache)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_identity_kernel_passes_grad(self):
        x = np.random.RandomState(4).randn(2, 1, 4, 4).astype(np.float32)
        p = ConvParams(np.ones((1, 1, 1, 1), dtype=np.float32), np.zeros(1, dtype=np.float32))
        y, cache = conv2d_forward(x, p, stride=1, pad=0)
        gy = np.random.RandomState(5).randn(*y.shape).astype(np.float32)
        gx, _, _ = conv2d_backward(gy, cache)
        np.testing.assert_array_equal(gx, gy)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_matches_finite_differences(self, stride, pad):
        rs = np.random.RandomState(6)
        x = rs.randn(2, 3, 6, 6)
        w = rs.randn(4, 3, 3, 3)
        b = rs.randn(4)
        p = ConvParams(w, b)
        y, cache = conv2d_forward(x, p, stride=stride, pad=pad)
        weights = rs.randn(*y.shape)
        gx, gw, gb = conv2d_backward(weights, cache)

        def loss():
            out, _ = conv2d_forward(x, p, stride=stride, pad=pad)
            return float((out * weights).sum())

        assert rel_err(finite_diff(loss, x), gx) < 1e-4
        assert rel_err(finite_diff(loss, w), gw) < 1e-4
        assert rel_err(finite_diff(loss, b), gb) < 1e-4

    def test_grad_shape_mismatch(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        p = ConvParams(np.ones((1, 1, 3, 3), dtype=np.float32), np.zeros(1, dtype=np.float32))
        _, cache = conv2d_forward(x, p, stride=1, pad=1)
        with pytest.raises(ShapeError):
            conv2d_backward(np.zeros((1, 1, 3, 3), dtype=np.float32), cache)


class TestRelu:
    def test_definition(self):
        z = np.array([[-1.0, 0.0, 2.0]], dtype=np.float32).reshape(1, 1, 1, 3)
        y, _ = relu_forward(z)
        np.testing.assert_array_equal(y.ravel(), [0.0, 0.0, 2.0])

    def test_positive_region_is_identity(self):
        z = np.random.RandomState(7).rand(2, 3, 4, 4).astype(np.float32) + 0.1
        y, cache = relu_forward(z)
        np.testing.assert_array_equal(y, z)
        gy = np.random.RandomState(8).randn(*z.shape).astype(np.float32)
        np.testing.assert_array_equal(relu_backward(gy, cache), gy)

    def test_matches_finite_differences_off_kink(self):
        rs = np.random.RandomState(9)
        z = rs.randn(2, 2, 5, 5)
        z[np.abs(z) < 5e-2] = 0.1  # keep away from the kink
        weights = rs.randn(*z.shape)
        _, cache = relu_forward(z)
        gz = relu_backward(weights, cache)

        def loss():
            out, _ = relu_forward(z)
            return float((out * weights).sum())

        assert rel_err(finite_diff(loss, z), gz) < 1e-3


class TestMaxPool:
    def test_constant_input(self):
        x = np.full((1, 2, 4, 4), 3.0, dtype=np.float32)
        y, _ = maxpool2d_forward(x, 2, 2)
        np.testing.assert_array_equal(y, np.full((1, 2, 2, 2), 3.0))

    def test_forced_max(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2)
        y, _ = maxpool2d_forward(x, 2, 2)
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 4.0

    def test_tie_goes_to_first_in_scan_order(self):
        x = np.array([[5.0, 5.0], [5.0, 5.0]], dtype=np.float32).reshape(1, 1, 2, 2)
        _, cache = maxpool2d_forward(x, 2, 2)
        gx = maxpool2d_backward(np.ones((1, 1, 1, 1), dtype=np.float32), cache)
        np.testing.assert_array_equal(gx[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_overlapping_windows_match_bruteforce(self):
        rs = np.random.RandomState(10)
        x = rs.randn(2, 2, 7, 7).astype(np.float32)
        y, _ = maxpool2d_forward(x, 3, 2)
        for ni in range(2):
            for ci in range(2):
                for p in range(y.shape[2]):
                    for q in range(y.shape[3]):
                        window = x[ni, ci, p * 2 : p * 2 + 3, q * 2 : q * 2 + 3]
                        assert y[ni, ci, p, q] == window.max()

    @pytest.mark.parametrize("k,stride,shape", [(2, 2, (2, 3, 6, 6)), (3, 2, (1, 2, 7, 7))])
    def test_matches_finite_differences_unique_maxima(self, k, stride, shape):
        rs = np.random.RandomState(11)
        # unique values guarantee unique window maxima
        x = rs.permutation(np.arange(np.prod(shape), dtype=np.float64)).reshape(shape)
        y, cache = maxpool2d_forward(x, k, stride)
        weights = rs.randn(*y.shape)
        gx = maxpool2d_backward(weights, cache)

        def loss():
            out, _ = maxpool2d_forward(x, k, stride)
            return float((out * weights).sum())

        assert rel_err(finite_diff(loss, x, h=0.25), gx) < 1e-3

    def test_backward_conserves_grad_mass(self):
        rs = np.random.RandomState(12)
        x = rs.randn(2, 3, 8, 8).astype(np.float32)
        y, cache = maxpool2d_forward(x, 2, 2)
        gy = rs.randn(*y.shape).astype(np.float32)
        gx = maxpool2d_backward(gy, cache)
        assert abs(float(gx.sum()) - float(gy.sum())) <= 1e-5 * max(1.0, abs(float(gy.sum())))

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            maxpool2d_forward(np.zeros((1, 1, 2, 2), dtype=np.float32), 3, 1)


class TestBatchNorm:
    def test_normalizes_training_batch(self):
        rs = np.random.RandomState(13)
        x = (rs.randn(4, 3, 8, 8) * 3.0 + 5.0).astype(np.float32)
        p = bn_params(3)
        y, _ = batchnorm_forward(x, p, training=True)
        mean = y.mean(axis=(0, 2, 3))
        var = y.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1.0).max() < 1e-3

    def test_constant_input_gives_beta(self):
        x = np.full((2, 2, 4, 4), 7.0, dtype=np.float32)
        p = bn_params(2)
        p.beta[:] = [1.5, -0.5]
        y, _ = batchnorm_forward(x, p, training=True)
        np.testing.assert_allclose(y[:, 0], 1.5, atol=1e-6)
        np.testing.assert_allclose(y[:, 1], -0.5, atol=1e-6)

    def test_running_stats_update(self):
        rs = np.random.RandomState(14)
        x = rs.randn(2, 2, 4, 4).astype(np.float32)
        p = bn_params(2, momentum=0.25)
        batchnorm_forward(x, p, training=True)
        expected_mean = 0.25 * x.mean(axis=(0, 2, 3))
        expected_var = 0.75 * 1.0 + 0.25 * x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(p.running_mean, expected_mean, rtol=1e-5)
        np.testing.assert_allclose(p.running_var, expected_var, rtol=1e-5)

    def test_inference_uses_running_stats(self):
        p = bn_params(1)
        p.running_mean[:] = 2.0
        p.running_var[:] = 4.0
        x = np.full((1, 1, 2, 2), 4.0, dtype=np.float32)
        y, _ = batchnorm_forward(x, p, training=False)
        np.testing.assert_allclose(y, (4.0 - 2.0) / np.sqrt(4.0 + p.eps), rtol=1e-5)

    def test_matches_finite_differences(self):
        rs = np.random.RandomState(15)
        x = rs.randn(2, 3, 4, 4)
        p = BNParams(
            gamma=rs.rand(3) + 0.5,
            beta=rs.randn(3),
            running_mean=np.zeros(3),
            running_var=np.ones(3),
        )
        weights = rs.randn(*x.shape)
        _, cache = batchnorm_forward(x, p, training=True)
        gx, ggamma, gbeta = batchnorm_backward(weights, cache)

        def loss():
            out, _ = batchnorm_forward(x, p, training=True)
            return float((out * weights).sum())

        assert rel_err(finite_diff(loss, x), gx) < 1e-3
        assert rel_err(finite_diff(loss, p.gamma), ggamma) < 1e-3
        assert rel_err(finite_diff(loss, p.beta), gbeta) < 1e-3

    def test_inference_backward_matches_finite_differences(self):
        rs = np.random.RandomState(16)
        x = rs.randn(1, 2, 3, 3)
        p = BNParams(
            gamma=rs.rand(2) + 0.5,
            beta=rs.randn(2),
            running_mean=rs.randn(2),
            running_var=rs.rand(2) + 0.5,
        )
        weights = rs.randn(*x.shape)
        _, cache = batchnorm_forward(x, p, training=False)
        gx, _, _ = batchnorm_backward(weights, cache)

        def loss():
            out, _ = batchnorm_forward(x, p, training=False)
            return float((out * weights).sum())

        assert rel_err(finite_diff(loss, x), gx) < 1e-3

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            batchnorm_forward(np.zeros((1, 3, 2, 2), dtype=np.float32), bn_params(2), True)

    def test_batch_too_small(self):
        with pytest.raises(ArgumentError):
            batchnorm_forward(np.zeros((1, 2, 1, 1), dtype=np.float32), bn_params(2), True)


class TestUpsample:
    def test_replication(self):
        x = np.full((1, 1, 1, 1), 5.0, dtype=np.float32)
        y, _ = upsample2x_forward(x)
        np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), 5.0))

    def test_stride2_downsample_round_trip(self):
        x = np.random.RandomState(17).randn(2, 3, 4, 5).astype(np.float32)
        y, _ = upsample2x_forward(x)
        np.testing.assert_array_equal(y[:, :, ::2, ::2], x)

    def test_backward_sums_children(self):
        x = np.zeros((1, 1, 2, 2), dtype=np.float32)
        _, cache = upsample2x_forward(x)
        gx = upsample2x_backward(np.ones((1, 1, 4, 4), dtype=np.float32), cache)
        np.testing.assert_array_equal(gx, np.full((1, 1, 2, 2), 4.0))


class TestSoftmax:
    def test_equal_logits_uniform(self):
        x = np.full((1, 5, 2, 2), 3.0, dtype=np.float32)
        y = softmax_channels(x)
        np.testing.assert_allclose(y, 0.2, atol=1e-7)

    def test_large_logits_stable(self):
        x = np.full((1, 2, 1, 1), 1000.0, dtype=np.float32)
        y = softmax_channels(x)
        assert np.isfinite(y).all()
        np.testing.assert_allclose(y.ravel(), [0.5, 0.5], atol=1e-7)

    def test_hand_value(self):
        x = np.array([0.0, math.log(3.0)], dtype=np.float32).reshape(1, 2, 1, 1)
        y = softmax_channels(x)
        np.testing.assert_allclose(y.ravel(), [0.25, 0.75], atol=1e-6)

    def test_sums_on_wide_range(self):
        x = np.random.RandomState(18).randn(3, 7, 6, 6).astype(np.float32) * 5
        y = softmax_channels(x)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)

    def test_open_interval_in_representable_range(self):
        # float32 saturates to exactly 0/1 once logit gaps exceed ~16;
        # strict bounds are asserted inside that range
        x = np.clip(np.random.RandomState(18).randn(3, 7, 6, 6) * 2, -6, 6).astype(np.float32)
        y = softmax_channels(x)
        assert (y > 0).all() and (y < 1).all()

    def test_shift_invariance(self):
        rs = np.random.RandomState(19)
        x = rs.randn(2, 4, 3, 3).astype(np.float32)
        shift = rs.randn(2, 1, 3, 3).astype(np.float32) * 10
        np.testing.assert_allclose(
            softmax_channels(x), softmax_channels(x + shift), atol=1e-6
        )

    def test_nonfinite_rejected(self):
        x = np.zeros((1, 2, 1, 1), dtype=np.float32)
        x[0, 0, 0, 0] = np.inf
        with pytest.raises(NumericError):
            softmax_channels(x)


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 5, 11):
            logits = np.zeros((2, c, 3, 3), dtype=np.float32)
            labels = np.random.RandomState(20).randint(0, c, size=(2, 3, 3))
            loss, _ = softmax_cross_entropy(logits, labels)
            assert abs(loss - math.log(c)) < 1e-6

    def test_confident_correct_logit_low_loss(self):
        logits = np.zeros((1, 2, 2, 2), dtype=np.float32)
        logits[:, 1] = 50.0
        labels = np.ones((1, 2, 2), dtype=np.int64)
        loss, _ = softmax_cross_entropy(logits, labels)
        assert loss < 1e-6

    def test_grad_channel_sums_zero(self):
        rs = np.random.RandomState(21)
        logits = rs.randn(2, 4, 5, 5).astype(np.float32)
        labels = rs.randint(0, 4, size=(2, 5, 5))
        _, grad = softmax_cross_entropy(logits, labels)
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-8)

    def test_matches_finite_differences(self):
        rs = np.random.RandomState(22)
        logits = rs.randn(2, 3, 4, 4)
        labels = rs.randint(0, 3, size=(2, 4, 4))
        _, grad = softmax_cross_entropy(logits, labels)

        def loss():
            value, _ = softmax_cross_entropy(logits, labels)
            return value

        assert rel_err(finite_diff(loss, logits), grad) < 1e-4

    def test_out_of_range_label(self):
        logits = np.zeros((1, 3, 2, 2), dtype=np.float32)
        labels = np.full((1, 2, 2), 3)
        with pytest.raises(DataError):
            softmax_cross_entropy(logits, labels)
