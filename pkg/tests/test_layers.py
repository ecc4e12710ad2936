import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermoedge.nn import (
    activation_forward,
    conv2d_forward,
    cross_entropy_loss,
    dense_forward,
    depthwise_conv2d_forward,
    dropout_forward,
    pool_forward,
    softmax,
)
from thermoedge.nn.layers import conv_geometry


def naive_conv(x, w, b, stride, padding):
    """Scalar-loop cross-correlation, NHWC, TF-style same padding."""
    n, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    if padding == "same":
        oh, ow = math.ceil(h / stride), math.ceil(wd / stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - wd, 0)
        top, left = ph // 2, pw // 2
    else:
        oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
        top = left = 0
    y = np.zeros((n, oh, ow, cout))
    for bi in range(n):
        for i in range(oh):
            for j in range(ow):
                for co in range(cout):
                    acc = b[co]
                    for di in range(kh):
                        for dj in range(kw):
                            r, c = i * stride + di - top, j * stride + dj - left
                            if 0 <= r < h and 0 <= c < wd:
                                for ci in range(cin):
                                    acc += x[bi, r, c, ci] * w[di, dj, ci, co]
                    y[bi, i, j, co] = acc
    return y


def test_conv_identity_1x1():
    x = np.random.default_rng(0).normal(size=(2, 5, 5, 3)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(conv2d_forward(x, w, np.zeros(3, np.float32)), x)


def test_conv_ones_valid():
    y = conv2d_forward(np.ones((1, 3, 3, 1), np.float32), np.ones((2, 2, 1, 1), np.float32),
                       np.zeros(1, np.float32), 1, "valid")
    assert y.shape == (1, 2, 2, 1)
    np.testing.assert_array_equal(y, naive_conv(np.ones((1, 3, 3, 1)), np.ones((2, 2, 1, 1)), [0.0], 1, "valid"))
    assert np.all(y == 4.0)


@pytest.mark.parametrize("stride,padding,k", [(1, "same", 3), (2, "same", 3), (1, "valid", 3),
                                              (2, "valid", 2), (2, "same", 2), (1, "same", 1)])
def test_conv_matches_scalar_oracle(stride, padding, k):
    rng = np.random.default_rng(stride * 10 + k)
    x = rng.normal(size=(2, 7, 6, 2))
    w = rng.normal(size=(k, k, 2, 3))
    b = rng.normal(size=3)
    np.testing.assert_allclose(conv2d_forward(x, w, b, stride, padding), naive_conv(x, w, b, stride, padding),
                               rtol=1e-12, atol=1e-12)


def test_same_padding_extra_on_bottom_right():
    assert conv_geometry(4, 2, 1, "same") == (4, 0, 1)
    assert conv_geometry(5, 3, 2, "same") == (3, 1, 1)
    assert conv_geometry(6, 3, 2, "same") == (3, 0, 1)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.integers(1, 3))
def test_same_padding_preserves_hw(h, w, k):
    x = np.zeros((1, h, w, 1), np.float32)
    y = conv2d_forward(x, np.zeros((k, k, 1, 2), np.float32), np.zeros(2, np.float32))
    assert y.shape == (1, h, w, 2)


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 1, 1)), np.zeros(1))


def test_depthwise_single_channel_equals_conv():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 6, 6, 1)).astype(np.float32)
    k = rng.normal(size=(3, 3)).astype(np.float32)
    b = np.array([0.5], np.float32)
    for stride in (1, 2):
        np.testing.assert_allclose(depthwise_conv2d_forward(x, k[:, :, None], b, stride),
                                   conv2d_forward(x, k[:, :, None, None], b, stride), rtol=1e-6, atol=1e-6)


def test_depthwise_two_channels_constant_input():
    x = np.full((1, 4, 4, 2), 2.0, np.float32)
    w = np.stack([np.ones((3, 3)), 2 * np.ones((3, 3))], axis=-1).astype(np.float32)
    y = depthwise_conv2d_forward(x, w, np.zeros(2, np.float32), 1, "valid")
    # interior: 9 taps * 2.0 * kernel value
    assert y.shape == (1, 2, 2, 2)
    assert np.all(y[..., 0] == 18.0) and np.all(y[..., 1] == 36.0)


def test_depthwise_matches_per_channel_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 5, 7, 3))
    w = rng.normal(size=(3, 3, 3))
    b = rng.normal(size=3)
    y = depthwise_conv2d_forward(x, w, b, 2, "same")
    for c in range(3):
        ref = naive_conv(x[..., c:c + 1], w[:, :, c:c + 1, None], b[c:c + 1], 2, "same")
        np.testing.assert_allclose(y[..., c:c + 1], ref, atol=1e-12)


def test_depthwise_channel_mismatch():
    with pytest.raises(ValueError):
        depthwise_conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3)), np.zeros(3))


def test_dense_examples():
    y = dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0, 0.0], [0.0, 3.0]]), np.array([1.0, 1.0]))
    assert y.tolist() == [[2.0, 7.0]]
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(dense_forward(x, np.eye(4), np.zeros(4)), x)
    b = np.arange(3.0)
    np.testing.assert_array_equal(dense_forward(np.zeros((2, 5)), np.ones((5, 3)), b), [b, b])
    with pytest.raises(ValueError):
        dense_forward(np.zeros((1, 3)), np.zeros((4, 2)), np.zeros(2))


def test_pool_examples():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert pool_forward(x, "max", 2, 2).item() == 4.0
    assert pool_forward(x, "global_avg").item() == 2.5
    const = np.full((2, 6, 6, 3), 1.5)
    assert np.all(pool_forward(const, "max") == 1.5)
    assert np.all(pool_forward(const, "global_avg") == 1.5)
    with pytest.raises(ValueError):
        pool_forward(np.zeros((1, 1, 1, 1)), "max", 2, 2)


def test_activation_examples():
    assert activation_forward(np.array(-1.0)) == 0
    assert activation_forward(np.array(7.0), "relu6") == 6
    assert activation_forward(np.array(3.5), "relu") == activation_forward(np.array(3.5), "relu6") == 3.5


def test_dropout():
    x = np.ones(100_000, np.float32)
    rng = np.random.default_rng(0)
    assert dropout_forward(x, 0.0, rng, True)[0] is x or np.array_equal(dropout_forward(x, 0.0, rng, True)[0], x)
    out, mask = dropout_forward(x, 0.5, rng, training=False)
    assert mask is None and out is x
    out, _ = dropout_forward(x, 0.5, rng, training=True)
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out).tolist()) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        dropout_forward(x, 1.0, rng, True)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros((1, 7))), np.full((1, 7), 1 / 7), rtol=1e-12)
    np.testing.assert_allclose(softmax(np.array([0.0, math.log(3.0)])), [0.25, 0.75], rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-50, 50))
def test_softmax_normalized_and_shift_invariant(seed, c):
    z = np.random.default_rng(seed).normal(0, 5, size=(4, 7)).astype(np.float32)
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)
    np.testing.assert_allclose(softmax(z + np.float32(c)), p, atol=1e-5)


def test_cross_entropy_examples():
    y = np.eye(7)[[2]]
    assert cross_entropy_loss(y, y) <= 1.2e-7
    assert cross_entropy_loss(np.full((1, 7), 1 / 7), y) == pytest.approx(math.log(7), abs=1e-5)
    assert cross_entropy_loss(np.full((1, 7), 1 / 7), y) == pytest.approx(1.94591, abs=1e-5)
    p = softmax(np.random.default_rng(0).normal(size=(1, 7)))
    assert cross_entropy_loss(np.vstack([p, p]), np.vstack([y, y])) == pytest.approx(cross_entropy_loss(p, y))
    # clipping keeps the loss finite for zero probability on the true class
    assert cross_entropy_loss(np.eye(7)[[0]], y) == pytest.approx(-math.log(1e-7))
