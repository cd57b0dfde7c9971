import numpy as np
import pytest

import lesionkit.nn as nn
from lesionkit.nn import layers as L
from lesionkit.nn.gradcheck import finite_diff_grad_check


def test_linear_layer_is_near_machine_precision():
    rng = np.random.default_rng(0)
    net = nn.NetworkSpec((L.Dense(4),), 3, "image", input_hw=(2, 2))
    params = nn.init_parameters(net, rng)
    batch = rng.normal(size=(3, 3, 2, 2))
    labels = rng.integers(0, 4, size=3)
    report = finite_diff_grad_check(net, params, batch, labels, eps=1e-5, rng=rng)
    assert report.max_rel_error < 1e-6


def test_classifier_stage_stack_under_1e4():
    # one full stage of the patch classifier: conv-bn-relu then pool
    rng = np.random.default_rng(1)
    net = nn.NetworkSpec(
        (
            L.Conv(6, (3, 3), 1, 1),
            L.BatchNorm(),
            L.Relu(),
            L.MaxPool(2, 2),
            L.AvgPool(0, 1),
            L.Dense(5),
        ),
        3,
        "image",
        input_hw=(8, 8),
    )
    params = nn.init_parameters(net, rng)
    batch = rng.normal(size=(4, 3, 8, 8))
    labels = rng.integers(0, 5, size=4)
    weights = np.array([1.0, 1.0, 5.0, 3.0, 8.0])
    report = finite_diff_grad_check(net, params, batch, labels, weights, eps=1e-5, rng=rng)
    assert report.max_rel_error < 1e-4


def test_pixel_output_network_checks_against_pixel_labels():
    rng = np.random.default_rng(2)
    net = nn.NetworkSpec(
        (
            L.Conv(4, (3, 3), 2, 1),
            L.BatchNorm(),
            L.Relu(),
            L.Conv(4, (3, 3), 1, 1),
            L.BatchNorm(),
            L.ResidualAdd(2),
            L.Relu(),
            L.UpsampleBilinear(2, match_input=True),
            L.Conv(3, (1, 1)),
        ),
        2,
        "pixel",
    )
    params = nn.init_parameters(net, rng)
    batch = rng.normal(size=(2, 2, 6, 6))
    labels = rng.integers(0, 3, size=(2, 6, 6))
    report = finite_diff_grad_check(net, params, batch, labels, eps=1e-5, rng=rng)
    assert report.max_rel_error < 1e-4


def test_report_covers_every_learnable_tensor():
    rng = np.random.default_rng(3)
    net = nn.NetworkSpec(
        (L.Conv(4, (3, 3), 1, 1), L.BatchNorm(), L.Relu(), L.AvgPool(0, 1), L.Dense(2)),
        3,
        "image",
        input_hw=(4, 4),
    )
    params = nn.init_parameters(net, rng)
    batch = rng.normal(size=(2, 3, 4, 4))
    labels = rng.integers(0, 2, size=2)
    report = finite_diff_grad_check(net, params, batch, labels, rng=rng)
    assert set(report.per_tensor) == set(params.learnable_keys())


def test_running_stats_untouched_by_check():
    rng = np.random.default_rng(4)
    net = nn.NetworkSpec(
        (L.Conv(4, (3, 3), 1, 1), L.BatchNorm(), L.AvgPool(0, 1), L.Dense(2)),
        3,
        "image",
        input_hw=(4, 4),
    )
    params = nn.init_parameters(net, rng)
    before = {k: v.copy() for k, v in params.tensors.items()}
    batch = rng.normal(size=(2, 3, 4, 4))
    finite_diff_grad_check(net, params, batch, rng.integers(0, 2, size=2), rng=rng)
    for key, val in before.items():
        np.testing.assert_array_equal(params[key], val)


def test_zero_eps_rejected():
    rng = np.random.default_rng(5)
    net = nn.NetworkSpec((L.Dense(2),), 1, "image", input_hw=(2, 2))
    params = nn.init_parameters(net, rng)
    with pytest.raises(ValueError, match="eps"):
        finite_diff_grad_check(
            net, params, np.zeros((1, 1, 2, 2)), np.array([0]), eps=0.0, rng=rng
        )
