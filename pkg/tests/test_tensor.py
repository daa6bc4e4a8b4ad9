import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipost.tensor import (
    NonFiniteError,
    ShapeError,
    conv2d_valid,
    elementwise,
    make_shape,
    matmul,
    maxpool2d,
    tensor,
)

from conftest import conv_bruteforce, maxpool_bruteforce


def test_shape_and_tensor_validation():
    assert make_shape([2, 3]) == (2, 3)
    with pytest.raises(ShapeError):
        make_shape([2, 0])
    with pytest.raises(ShapeError):
        tensor([1, 2, 3], shape=(2, 2))
    with pytest.raises(NonFiniteError):
        tensor([1.0, np.nan])
    assert tensor(range(6), shape=(2, 3)).shape == (2, 3)


def test_conv_hand_example():
    x = tensor([[[1, 2], [3, 4]]])
    k = tensor([[[[1, 0], [0, 1]]]])
    np.testing.assert_array_equal(conv2d_valid(x, k, np.zeros(1), 1), [[[5.0]]])


def test_conv_zero_kernel(rng):
    x = rng.normal(size=(3, 7, 6))
    out = conv2d_valid(x, np.zeros((4, 3, 3, 2)), np.zeros(4), 2)
    assert out.shape == (4, 3, 3)
    assert not out.any()


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_conv_matches_bruteforce(rng, stride):
    x = rng.normal(size=(2, 9, 8))
    k = rng.normal(size=(3, 2, 3, 2))
    b = rng.normal(size=3)
    np.testing.assert_allclose(conv2d_valid(x, k, b, stride), conv_bruteforce(x, k, b, stride), atol=1e-12)


def test_conv_batch_equals_per_sample(rng):
    x = rng.normal(size=(4, 2, 6, 6))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    batch = conv2d_valid(x, k, b)
    for n in range(4):
        np.testing.assert_array_equal(batch[n], conv2d_valid(x[n], k, b))


def test_conv_errors(rng):
    with pytest.raises(ShapeError, match="channel"):
        conv2d_valid(rng.normal(size=(2, 5, 5)), rng.normal(size=(1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError, match="height"):
        conv2d_valid(rng.normal(size=(1, 2, 5)), rng.normal(size=(1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(NonFiniteError):
        conv2d_valid(np.full((1, 3, 3), np.inf), np.ones((1, 1, 2, 2)), np.zeros(1))


def test_conv_shift_example(rng):
    x = rng.normal(size=(1, 6, 7))
    k = rng.normal(size=(2, 1, 3, 3))
    shifted = np.zeros_like(x)
    shifted[:, :, 1:] = x[:, :, :-1]
    a = conv2d_valid(x, k, np.zeros(2))
    b = conv2d_valid(shifted, k, np.zeros(2))
    np.testing.assert_allclose(b[:, :, 1:], a[:, :, :-1], atol=1e-12)


def test_conv_linear(rng):
    x, y = rng.normal(size=(2, 2, 7, 7))
    k = rng.normal(size=(3, 2, 3, 3))
    z = np.zeros(3)
    lhs = conv2d_valid(2.5 * x - 0.7 * y, k, z)
    rhs = 2.5 * conv2d_valid(x, k, z) - 0.7 * conv2d_valid(y, k, z)
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


def test_conv_deterministic(rng):
    x = rng.normal(size=(2, 8, 8))
    k = rng.normal(size=(2, 2, 3, 3))
    a = conv2d_valid(x, k, np.zeros(2))
    b = conv2d_valid(x.copy(), k.copy(), np.zeros(2))
    assert a.tobytes() == b.tobytes()


def test_maxpool_hand_example():
    out, idx = maxpool2d(tensor([[[1, 2], [3, 4]]]), 2, 2)
    np.testing.assert_array_equal(out, [[[4.0]]])
    np.testing.assert_array_equal(idx, [[[3]]])


def test_maxpool_constant_picks_first():
    out, idx = maxpool2d(np.full((1, 4, 4), 7.0), 2, 2)
    np.testing.assert_array_equal(out, np.full((1, 2, 2), 7.0))
    np.testing.assert_array_equal(idx, [[[0, 2], [8, 10]]])


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 1), (3, 2)])
def test_maxpool_matches_bruteforce(rng, window, stride):
    x = rng.integers(0, 4, size=(3, 7, 8)).astype(float)  # many ties
    out, idx = maxpool2d(x, window, stride)
    bo, bi = maxpool_bruteforce(x, window, stride)
    np.testing.assert_array_equal(out, bo)
    np.testing.assert_array_equal(idx, bi)


def test_maxpool_bound_and_halving(rng):
    x = rng.normal(size=(2, 10, 6))
    out, _ = maxpool2d(x, 2, 2)
    assert out.shape == (2, 5, 3)
    assert out.max() <= x.max()


def test_maxpool_window_too_large():
    with pytest.raises(ShapeError):
        maxpool2d(np.zeros((1, 2, 2)), 3, 1)


def test_matmul_examples(rng):
    m = tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(np.eye(2), m), m)
    np.testing.assert_array_equal(matmul(tensor([[1, 2]]), tensor([[3], [4]])), [[11.0]])
    assert not matmul(rng.normal(size=(3, 4)), np.zeros((4, 2))).any()
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    a, b, c = rng.normal(size=(3, 3, 3))
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-4)


def test_elementwise():
    np.testing.assert_array_equal(elementwise("relu", [-1, 0, 2]), [0, 0, 2])
    x = np.array([1.5, -2.0])
    np.testing.assert_array_equal(elementwise("add", x, np.zeros(2)), x)
    np.testing.assert_array_equal(elementwise("scale", [1, 2], 2), [2, 4])
    np.testing.assert_array_equal(elementwise("sub", [3, 4], [1, 1]), [2, 3])
    np.testing.assert_array_equal(elementwise("mul", [3, 4], [2, 0.5]), [6, 2])
    np.testing.assert_array_equal(elementwise("relu_grad", [-1, 2], [5, 5]), [0, 5])
    with pytest.raises(ShapeError):
        elementwise("add", [1, 2], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    h=st.integers(5, 12),
    w=st.integers(5, 12),
    kh=st.integers(1, 3),
    kw=st.integers(1, 3),
    dr=st.integers(0, 2),
    dc=st.integers(0, 2),
)
def test_conv_shift_equivariance(seed, h, w, kh, kw, dr, dc):
    rng = np.random.default_rng(seed)
    big = rng.normal(size=(2, h + dr, w + dc))
    k = rng.normal(size=(3, 2, kh, kw))
    x = big[:, dr:, dc:]           # crop
    shifted = big[:, :h, :w]       # same content moved by (dr, dc)
    a = conv2d_valid(x, k, np.zeros(3))
    b = conv2d_valid(shifted, k, np.zeros(3))
    ho, wo = a.shape[1:]
    np.testing.assert_allclose(b[:, dr:, dc:], a[:, :ho - dr, :wo - dc], atol=1e-6)
