"""Tests for tensor creation, elementwise ops, concat, and padding."""

import numpy as np
import pytest

from mapseg.errors import ArgumentError, ShapeError
from mapseg.rng import Rng
from mapseg.tensor import (
    Shape4,
    center_crop_spatial,
    concat_channels,
    pad_spatial,
    tensor_full,
    tensor_map,
    tensor_rand_normal,
    tensor_zip,
)


class TestCreate:
    def test_zero_fill(self):
        t = tensor_full(Shape4(1, 1, 2, 2), 0.0)
        np.testing.assert_array_equal(t, np.zeros((1, 1, 2, 2), dtype=np.float32))

    def test_singleton(self):
        t = tensor_full(Shape4(1, 1, 1, 1), 3.5)
        assert t.shape == (1, 1, 1, 1)
        assert t[0, 0, 0, 0] == np.float32(3.5)

    def test_element_count(self):
        t = tensor_full(Shape4(2, 3, 4, 4), 1.0)
        assert t.size == 96
        assert (t == 1.0).all()

    def test_dtype_is_float32(self):
        assert tensor_full(Shape4(1, 1, 1, 1), 0.0).dtype == np.float32

    def test_negative_dim_rejected(self):
        with pytest.raises(ShapeError):
            tensor_full(Shape4(1, -1, 2, 2), 0.0)

    def test_overflow_rejected(self):
        with pytest.raises(ArgumentError):
            tensor_full(Shape4(1 << 31, 1 << 31, 2, 2), 0.0)


class TestRandNormal:
    def test_zero_stddev_degenerate(self):
        t = tensor_rand_normal(Shape4(2, 2, 3, 3), 4.5, 0.0, Rng(0))
        assert (t == np.float32(4.5)).all()

    def test_same_seed_identical(self):
        a = tensor_rand_normal(Shape4(2, 3, 8, 8), 0.0, 1.0, Rng(77))
        b = tensor_rand_normal(Shape4(2, 3, 8, 8), 0.0, 1.0, Rng(77))
        np.testing.assert_array_equal(a, b)

    def test_negative_stddev_rejected(self):
        with pytest.raises(ArgumentError):
            tensor_rand_normal(Shape4(1, 1, 2, 2), 0.0, -1.0, Rng(0))

    def test_million_draw_mean(self):
        t = tensor_rand_normal(Shape4(1, 1, 1000, 1000), 0.0, 1.0, Rng(5))
        assert abs(float(t.mean())) < 0.005


class TestElementwise:
    def test_map_identity(self):
        x = tensor_rand_normal(Shape4(1, 2, 4, 4), 0.0, 1.0, Rng(1))
        np.testing.assert_array_equal(tensor_map(x, lambda t: t), x)

    def test_zip_additive_identity(self):
        x = tensor_rand_normal(Shape4(1, 2, 4, 4), 0.0, 1.0, Rng(2))
        zeros = tensor_full(Shape4(1, 2, 4, 4), 0.0)
        np.testing.assert_array_equal(tensor_zip(x, zeros, lambda a, b: a + b), x)

    def test_zip_self_difference(self):
        x = tensor_rand_normal(Shape4(2, 1, 3, 3), 1.0, 2.0, Rng(3))
        out = tensor_zip(x, x, lambda a, b: a - b)
        np.testing.assert_array_equal(out, np.zeros_like(x))

    def test_zip_shape_mismatch(self):
        a = tensor_full(Shape4(1, 1, 2, 2), 0.0)
        b = tensor_full(Shape4(1, 1, 2, 3), 0.0)
        with pytest.raises(ShapeError):
            tensor_zip(a, b, lambda x, y: x + y)


class TestConcat:
    def test_shape_arithmetic(self):
        a = tensor_full(Shape4(1, 2, 4, 4), 1.0)
        b = tensor_full(Shape4(1, 3, 4, 4), 2.0)
        out = concat_channels(a, b)
        assert out.shape == (1, 5, 4, 4)

    def test_empty_channel_identity(self):
        a = tensor_rand_normal(Shape4(1, 2, 4, 4), 0.0, 1.0, Rng(4))
        empty = tensor_full(Shape4(1, 0, 4, 4), 0.0)
        np.testing.assert_array_equal(concat_channels(a, empty), a)

    def test_slice_round_trip(self):
        a = tensor_rand_normal(Shape4(2, 2, 4, 4), 0.0, 1.0, Rng(5))
        b = tensor_rand_normal(Shape4(2, 3, 4, 4), 0.0, 1.0, Rng(6))
        out = concat_channels(a, b)
        np.testing.assert_array_equal(out[:, : a.shape[1]], a)
        np.testing.assert_array_equal(out[:, a.shape[1] :], b)

    def test_spatial_mismatch(self):
        a = tensor_full(Shape4(1, 2, 4, 4), 0.0)
        b = tensor_full(Shape4(1, 2, 5, 4), 0.0)
        with pytest.raises(ShapeError):
            concat_channels(a, b)


class TestPad:
    def test_pad_zero_is_noop(self):
        x = tensor_rand_normal(Shape4(1, 2, 3, 3), 0.0, 1.0, Rng(7))
        np.testing.assert_array_equal(pad_spatial(x, 0, 0, 9.0), x)

    def test_forced_layout(self):
        x = tensor_full(Shape4(1, 1, 1, 1), 5.0)
        out = pad_spatial(x, 1, 1, 0.0)
        expected = np.zeros((1, 1, 3, 3), dtype=np.float32)
        expected[0, 0, 1, 1] = 5.0
        np.testing.assert_array_equal(out, expected)

    def test_pad_crop_round_trip(self):
        rng = Rng(8)
        for pad_h, pad_w in [(0, 0), (1, 2), (3, 3), (5, 1)]:
            x = tensor_rand_normal(Shape4(2, 3, 6, 5), 0.0, 1.0, rng)
            padded = pad_spatial(x, pad_h, pad_w, -1.0)
            np.testing.assert_array_equal(center_crop_spatial(padded, 6, 5), x)

    def test_negative_pad_rejected(self):
        with pytest.raises(ArgumentError):
            pad_spatial(tensor_full(Shape4(1, 1, 2, 2), 0.0), -1, 0, 0.0)
