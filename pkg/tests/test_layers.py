"""Tests for the network building blocks and the compute-kernel backends.

Convolution semantics (cross-correlation, zero same-padding) are pinned with
hand-computed cases; when the compiled backend is present, its outputs are
compared against the pure-numpy implementation on random inputs.
"""

import numpy as np
import pytest

from crackloss.kernels import _numpy_core as npk
from crackloss.kernels import backend_name
from crackloss.layers import (
    LayerParams,
    concat_backward,
    concat_forward,
    conv2d_backward,
    conv2d_forward,
    deconv2x2s2_backward,
    deconv2x2s2_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
)

try:
    from crackloss.kernels import _conv_cy as cyk
except ImportError:
    cyk = None

needs_cython = pytest.mark.skipif(cyk is None, reason="compiled backend not built")


def params_for(k):
    return LayerParams(kernels=k, biases=np.zeros(k.shape[0]))


class TestLayerParams:
    def test_rejects_wrong_ranks(self):
        with pytest.raises(ValueError):
            LayerParams(kernels=np.zeros((2, 3, 3)), biases=np.zeros(2))
        with pytest.raises(ValueError):
            LayerParams(kernels=np.zeros((2, 1, 3, 3)), biases=np.zeros((2, 1)))

    def test_rejects_bias_count_mismatch(self):
        with pytest.raises(ValueError):
            LayerParams(kernels=np.zeros((2, 1, 3, 3)), biases=np.zeros(3))

    def test_rejects_non_finite(self):
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            LayerParams(kernels=k, biases=np.zeros(1))


class TestConv:
    def test_center_tap_is_identity(self):
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        assert np.array_equal(conv2d_forward(x, params_for(k)), x)

    def test_cross_correlation_orientation(self):
        # weight at kernel position (1, 2) reads the neighbour to the RIGHT
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 2] = 1.0
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 5.0
        y = conv2d_forward(x, params_for(k))
        assert y[0, 0, 1, 0] == 5.0
        assert np.sum(y) == 5.0

    def test_zero_padding_at_border(self):
        k = np.ones((1, 1, 3, 3))
        x = np.ones((1, 1, 3, 3))
        y = conv2d_forward(x, params_for(k))
        assert y[0, 0, 1, 1] == 9.0
        assert y[0, 0, 0, 0] == 4.0  # corner sees a 2x2 live patch
        assert y[0, 0, 0, 1] == 6.0

    def test_bias_broadcast(self):
        k = np.zeros((2, 1, 3, 3))
        p = LayerParams(kernels=k, biases=np.array([1.5, -2.0]))
        y = conv2d_forward(np.zeros((1, 1, 4, 4)), p)
        assert np.all(y[0, 0] == 1.5)
        assert np.all(y[0, 1] == -2.0)

    def test_hand_computed_multichannel(self):
        x = np.zeros((1, 2, 2, 2))
        x[0, 0] = [[1.0, 2.0], [3.0, 4.0]]
        x[0, 1] = [[10.0, 20.0], [30.0, 40.0]]
        k = np.zeros((1, 2, 3, 3))
        k[0, 0, 1, 1] = 1.0  # center of channel 0
        k[0, 1, 1, 1] = 2.0  # center of channel 1
        y = conv2d_forward(x, params_for(k))
        assert np.array_equal(y[0, 0], [[21.0, 42.0], [63.0, 84.0]])

    def test_backward_bias_is_gout_sum(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 4, 4))
        k = rng.normal(size=(5, 3, 3, 3))
        gout = rng.normal(size=(2, 5, 4, 4))
        _, _, gb = conv2d_backward(x, params_for(k), gout)
        assert np.allclose(gb, gout.sum(axis=(0, 2, 3)))


class TestRelu:
    def test_forward(self):
        x = np.array([-2.0, 0.0, 3.0])
        assert relu_forward(x).tolist() == [0.0, 0.0, 3.0]

    def test_backward_zero_at_kink(self):
        x = np.array([-1.0, 0.0, 1.0])
        g = relu_backward(x, np.ones(3))
        assert g.tolist() == [0.0, 0.0, 1.0]


class TestMaxPool:
    def test_values_and_indices(self):
        x = np.array([[[[1.0, 2.0, 5.0, 6.0],
                        [3.0, 4.0, 8.0, 7.0],
                        [9.0, 9.0, 0.0, 0.0],
                        [9.0, 9.0, 0.0, 0.0]]]])
        y, idx = maxpool2x2_forward(x)
        assert y[0, 0].tolist() == [[4.0, 8.0], [9.0, 0.0]]
        # tie in the lower-left window resolves to the first (row-major) max
        assert idx[0, 0, 1, 0] == 0
        assert idx[0, 0, 0, 0] == 3
        assert idx[0, 0, 0, 1] == 2

    def test_backward_routes_to_argmax(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        _, idx = maxpool2x2_forward(x)
        g = maxpool2x2_backward(idx, np.array([[[[7.0]]]]))
        assert g[0, 0].tolist() == [[0.0, 0.0], [0.0, 7.0]]

    def test_pool_unpool_preserves_grad_mass(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 8, 8))
        _, idx = maxpool2x2_forward(x)
        gout = rng.normal(size=(2, 3, 4, 4))
        g = maxpool2x2_backward(idx, gout)
        assert np.sum(g) == pytest.approx(np.sum(gout))


class TestDeconv:
    def test_doubles_spatial_dims(self):
        k = np.zeros((3, 2, 2, 2))
        y = deconv2x2s2_forward(np.zeros((1, 2, 4, 4)), params_for(k))
        assert y.shape == (1, 3, 8, 8)

    def test_hand_computed_tiles(self):
        # each input pixel stamps its 2x2 kernel tile, no overlap at stride 2
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        k = np.array([[[[10.0, 20.0], [30.0, 40.0]]]])
        y = deconv2x2s2_forward(x, params_for(k))
        assert y[0, 0].tolist() == [
            [10.0, 20.0, 20.0, 40.0],
            [30.0, 40.0, 60.0, 80.0],
            [30.0, 60.0, 40.0, 80.0],
            [90.0, 120.0, 120.0, 160.0],
        ]


class TestConcat:
    def test_forward_stacks_channels(self):
        a = np.ones((1, 2, 3, 3))
        b = np.zeros((1, 3, 3, 3))
        y = concat_forward(a, b)
        assert y.shape == (1, 5, 3, 3)
        assert np.all(y[:, :2] == 1.0)
        assert np.all(y[:, 2:] == 0.0)

    def test_backward_splits(self):
        g = np.arange(2 * 5 * 2 * 2, dtype=np.float64).reshape(2, 5, 2, 2)
        ga, gb = concat_backward(g, 2)
        assert np.array_equal(ga, g[:, :2])
        assert np.array_equal(gb, g[:, 2:])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            concat_forward(np.ones((1, 2, 3, 3)), np.ones((1, 2, 4, 4)))


@needs_cython
class TestBackendParity:
    """The compiled and pure-numpy kernels must agree on random inputs."""

    def test_conv_forward_backward(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 8, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        gout = rng.normal(size=(2, 4, 8, 8))
        assert np.allclose(cyk.conv3x3_forward(x, k, b),
                           npk.conv3x3_forward(x, k, b), atol=1e-12)
        for gc, gn in zip(cyk.conv3x3_backward(x, k, gout),
                          npk.conv3x3_backward(x, k, gout)):
            assert np.allclose(gc, gn, atol=1e-11)

    def test_pool_forward_backward(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 8, 8))
        yc, ic = cyk.pool2x2_forward(x)
        yn, inn = npk.pool2x2_forward(x)
        assert np.array_equal(yc, yn)
        assert np.array_equal(ic, inn)
        gout = rng.normal(size=(2, 3, 4, 4))
        assert np.array_equal(cyk.pool2x2_backward(ic, gout),
                              npk.pool2x2_backward(inn, gout))

    def test_deconv_forward_backward(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 4, 4, 4))
        k = rng.normal(size=(3, 4, 2, 2))
        b = rng.normal(size=3)
        gout = rng.normal(size=(2, 3, 8, 8))
        assert np.allclose(cyk.deconv2x2_forward(x, k, b),
                           npk.deconv2x2_forward(x, k, b), atol=1e-12)
        for gc, gn in zip(cyk.deconv2x2_backward(x, k, gout),
                          npk.deconv2x2_backward(x, k, gout)):
            assert np.allclose(gc, gn, atol=1e-11)

    def test_backend_reports_name(self):
        assert backend_name() in ("cython", "numpy")
