import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xcal import ops
from xcal.errors import ShapeError
from xcal.fixtures import load_fixture
from xcal.graph import run

from oracles import bilinear_loops, bn_loops, conv2d_loops, linear_loops, maxpool_loops


@pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((1, 1), (1, 1)), ((2, 2), (1, 1)), ((1, 2), (2, 0))])
def test_conv2d_matches_loops(stride, padding):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 7, 8)).astype(np.float32)
    w = rng.normal(size=(4, 3, 3, 2)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    h, wd = 7 + 2 * padding[0] - 3, 8 + 2 * padding[1] - 2
    if h % stride[0] or wd % stride[1]:
        with pytest.raises(ShapeError):
            ops.conv2d(x, w, b, stride, padding)
        return
    got = ops.conv2d(x, w, b, stride, padding)
    assert got.dtype == np.float32
    np.testing.assert_allclose(got, conv2d_loops(x, w, b, stride, padding), rtol=1e-5, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.sampled_from([1, 3]), st.integers(0, 2**31))
def test_conv2d_random_shapes(cin, cout, size, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, cin, size, size)).astype(np.float32)
    w = rng.normal(size=(cout, cin, k, k)).astype(np.float32)
    got = ops.conv2d(x, w, None, 1, k // 2)
    np.testing.assert_allclose(got, conv2d_loops(x, w, None, (1, 1), (k // 2, k // 2)), rtol=1e-4, atol=1e-5)


def test_conv2d_rejects_channel_mismatch_and_nonintegral_output():
    x = np.zeros((1, 2, 5, 5), np.float32)
    with pytest.raises(ShapeError):
        ops.conv2d(x, np.zeros((1, 3, 3, 3), np.float32))
    with pytest.raises(ShapeError, match="non-integral"):
        ops.conv2d(x, np.zeros((1, 2, 2, 2), np.float32), stride=2)


def test_linear_and_bn_match_loops():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6)).astype(np.float32)
    w = rng.normal(size=(3, 6)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    np.testing.assert_allclose(ops.linear(x, w, b), linear_loops(x, w, b), rtol=1e-5, atol=1e-6)
    x4 = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    mean, gamma, beta = rng.normal(size=(3, 3))
    var = rng.uniform(0.1, 2, 3)
    np.testing.assert_allclose(ops.batchnorm_apply(x4, mean, var, gamma, beta, 1e-5),
                               bn_loops(x4, mean, var, gamma, beta, 1e-5), rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(ops.batchnorm_apply(x, np.zeros(6), np.ones(6), np.ones(6), np.zeros(6), 0.0), x)


def test_pooling_and_elementwise():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    np.testing.assert_array_equal(ops.maxpool2d(x, 2, 2), maxpool_loops(x, 2, 2))
    np.testing.assert_array_equal(ops.maxpool2d(x, 3, 3), maxpool_loops(x, 3, 3))
    np.testing.assert_allclose(ops.global_avgpool(x), x.astype(np.float64).mean(axis=(2, 3)), rtol=1e-5, atol=1e-7)
    assert ops.relu(x).min() == 0
    assert ops.flatten(x).shape == (2, 108)
    with pytest.raises(ShapeError):
        ops.add(x, x[:, :2])


@pytest.mark.parametrize("shape,out", [((3, 4, 4), (8, 8)), ((1, 9, 7), (3, 5)), ((2, 5, 6), (5, 6)), ((1, 1, 1), (3, 2))])
def test_resize_bilinear_matches_loops(shape, out):
    img = np.random.default_rng(7).normal(size=shape).astype(np.float32)
    got = ops.resize_bilinear(img[None], *out)[0]
    np.testing.assert_allclose(got, bilinear_loops(img.astype(np.float64), *out), rtol=1e-6, atol=1e-6)


def test_resize_same_size_is_bit_exact_copy():
    x = np.random.default_rng(8).normal(size=(1, 3, 5, 5)).astype(np.float32)
    y = ops.resize_bilinear(x, 5, 5)
    assert y is not x and y.tobytes() == x.tobytes()


def test_constant_image_stays_constant_under_resize():
    x = np.full((1, 2, 7, 3), 0.25, np.float32)
    np.testing.assert_array_equal(ops.resize_bilinear(x, 4, 9), 0.25)


def test_per_sample_results_do_not_depend_on_batch_size():
    g = load_fixture()
    x = np.random.default_rng(9).normal(size=(10, 3, 32, 32)).astype(np.float32)
    whole = run(g, x)[0]
    for bs in (1, 3, 7):
        parts = np.concatenate([run(g, x[i:i + bs])[0] for i in range(0, 10, bs)])
        assert parts.tobytes() == whole.tobytes()
