import numpy as np
import pytest

import lesionkit.nn as nn
from lesionkit.nn import layers as L

from oracles import naive_avgpool, naive_bilinear_resize, naive_conv, naive_maxpool

rng = np.random.default_rng(7)


def test_conv_identity_kernel_passes_input_through():
    x = rng.normal(size=(2, 3, 5, 5))
    spec = L.Conv(out_channels=3, kernel=(1, 1))
    w = np.eye(3).reshape(3, 3, 1, 1)
    out, _ = L.conv_forward(spec, x, w, np.zeros(3))
    np.testing.assert_array_equal(out, x)


def test_conv_matches_naive_loop():
    x = rng.normal(size=(2, 3, 7, 6))
    for stride, pad, kernel in [(1, 0, (3, 3)), (2, 1, (3, 3)), (1, 0, (1, 1)), (2, 0, (2, 2))]:
        spec = L.Conv(out_channels=4, kernel=kernel, stride=stride, pad=pad)
        w = rng.normal(size=(4, 3, *kernel))
        b = rng.normal(size=4)
        out, _ = L.conv_forward(spec, x, w, b)
        np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pad), atol=1e-12)


def test_relu_on_negative_input_is_zero():
    x = np.full((1, 2, 3, 3), -1.0)
    out, _ = L.relu_forward(x)
    np.testing.assert_array_equal(out, np.zeros_like(x))


def test_maxpool_spec_example():
    x = np.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    out, _ = L.maxpool_forward(L.MaxPool(2, 2), x)
    expected = naive_maxpool(x, 2, 2)
    np.testing.assert_array_equal(expected.ravel(), [6, 8, 14, 16])
    np.testing.assert_array_equal(out, expected)


def test_maxpool_matches_naive_on_random_inputs():
    x = rng.normal(size=(2, 3, 9, 8))
    for window, stride in [(2, 2), (3, 2), (3, 3), (2, 1)]:
        out, _ = L.maxpool_forward(L.MaxPool(window, stride), x)
        np.testing.assert_array_equal(out, naive_maxpool(x, window, stride))


def test_avgpool_matches_naive_including_global():
    x = rng.normal(size=(2, 3, 8, 8))
    for window, stride in [(2, 2), (4, 4), (0, 1)]:
        out, _ = L.avgpool_forward(L.AvgPool(window, stride), x)
        np.testing.assert_allclose(out, naive_avgpool(x, window, stride), atol=1e-12)


def test_upsample_matches_naive_resampler():
    x = rng.normal(size=(2, 3, 5, 7))
    out, _ = L.upsample_forward(x, 10, 14)
    for n in range(2):
        for c in range(3):
            np.testing.assert_allclose(
                out[n, c], naive_bilinear_resize(x[n, c], 10, 14), atol=1e-12
            )


def test_upsample_backward_is_exact_adjoint():
    # <R x, y> == <x, R^T y> for the linear resize operator
    x = rng.normal(size=(1, 2, 6, 5))
    y = rng.normal(size=(1, 2, 12, 10))
    out, aux = L.upsample_forward(x, 12, 10)
    back = L.upsample_backward(aux, y)
    assert np.isclose((out * y).sum(), (x * back).sum())


def test_batchnorm_train_normalizes_per_channel():
    x = rng.normal(loc=3.0, scale=2.0, size=(8, 4, 6, 6))
    out, _ = L.batchnorm_forward(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), train=True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batchnorm_eval_uses_running_stats():
    x = rng.normal(size=(4, 2, 3, 3))
    mean = np.array([1.0, -1.0])
    var = np.array([4.0, 0.25])
    out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), mean, var, train=False)
    expected = (x - mean[None, :, None, None]) / np.sqrt(var + L.BN_EPS)[None, :, None, None]
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize(
    "make_net",
    [
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1),), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 2, 1),), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(5, (1, 1)),), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1), L.BatchNorm()), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1), L.Relu()), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1), L.MaxPool(2, 2)), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1), L.AvgPool(2, 2)), 3, "pixel"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1), L.AvgPool(0, 1)), 3, "image"),
        lambda: nn.NetworkSpec((L.Conv(4, (3, 3), 1, 1), L.UpsampleBilinear(2)), 3, "pixel"),
        lambda: nn.NetworkSpec(
            (L.Conv(4, (3, 3), 1, 1), L.Relu(), L.Conv(4, (3, 3), 1, 1), L.ResidualAdd(0)),
            3,
            "pixel",
        ),
        lambda: nn.NetworkSpec((L.Dense(5),), 3, "image", input_hw=(6, 6)),
    ],
    ids=[
        "conv3x3",
        "conv-stride2",
        "conv1x1",
        "conv-bn",
        "conv-relu",
        "conv-maxpool",
        "conv-avgpool",
        "conv-globalavg",
        "conv-upsample",
        "residual-add",
        "dense",
    ],
)
def test_gradient_fidelity_per_layer_kind(make_net):
    # analytic backward vs central differences for each catalogue entry
    net = make_net()
    r = np.random.default_rng(11)
    params = nn.init_parameters(net, r)
    batch = r.normal(size=(3, 3, 6, 6))
    shapes = nn.infer_shapes(net, 6, 6)
    if net.output == "pixel":
        k, oh, ow = shapes[-1]
        labels = r.integers(0, k, size=(3, oh, ow))
    else:
        labels = r.integers(0, shapes[-1][0], size=3)
    report = nn.finite_diff_grad_check(net, params, batch, labels, eps=1e-5, rng=r)
    assert report.max_rel_error < 1e-4, f"max relative gradient error {report.max_rel_error:.2e}"
