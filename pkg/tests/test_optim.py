import math

import numpy as np

from lesionkit.nn.network import Parameters
from lesionkit.nn.optim import SGDConfig, SGDMomentum


def one_param(value: float = 0.0) -> Parameters:
    return Parameters({"layer000.w": np.array([value])})


def test_single_step_without_momentum_history():
    params = one_param(0.0)
    opt = SGDMomentum.create(params, SGDConfig(lr=0.01, momentum=0.9))
    opt.step(params, {"layer000.w": np.array([1.0])})
    assert math.isclose(params["layer000.w"][0], -0.01, rel_tol=1e-12)


def test_two_steps_accumulate_velocity():
    # v1 = -0.01, v2 = 0.9*(-0.01) - 0.01 = -0.019, theta = -0.029
    params = one_param(0.0)
    opt = SGDMomentum.create(params, SGDConfig(lr=0.01, momentum=0.9))
    g = {"layer000.w": np.array([1.0])}
    opt.step(params, g)
    opt.step(params, g)
    assert math.isclose(params["layer000.w"][0], -0.029, rel_tol=1e-12)


def test_epoch_decay_multiplies_lr_by_gamma():
    params = one_param()
    opt = SGDMomentum.create(params, SGDConfig(lr=0.01, momentum=0.0, gamma=0.1, decay_every=1))
    assert opt.lr == 0.01
    opt.end_epoch()
    assert math.isclose(opt.lr, 0.001, rel_tol=1e-12)
    opt.end_epoch()
    assert math.isclose(opt.lr, 0.0001, rel_tol=1e-12)


def test_decay_at_schedule_overrides_decay_every():
    params = one_param()
    cfg = SGDConfig(lr=0.01, momentum=0.0, gamma=0.1, decay_every=1, decay_at=(2,))
    opt = SGDMomentum.create(params, cfg)
    opt.end_epoch()
    assert opt.lr == 0.01
    opt.end_epoch()
    assert math.isclose(opt.lr, 0.001, rel_tol=1e-12)


def test_paper_defaults_halfway_decay():
    cfg = SGDConfig.paper_defaults(total_epochs=6)
    assert cfg.lr == 0.01
    assert cfg.momentum == 0.9
    assert cfg.gamma == 0.1
    assert cfg.decay_every == 3
    assert SGDConfig.paper_defaults(total_epochs=10).decay_every == 5


def test_zero_gradient_is_fixed_point_and_velocity_decays():
    params = one_param(1.0)
    opt = SGDMomentum.create(params, SGDConfig(lr=0.1, momentum=0.5))
    opt.step(params, {"layer000.w": np.array([1.0])})
    pos_after_push = params["layer000.w"][0]
    zero = {"layer000.w": np.array([0.0])}
    drift = []
    for _ in range(5):
        before = params["layer000.w"][0]
        opt.step(params, zero)
        drift.append(params["layer000.w"][0] - before)
    # velocity halves each step, so movement shrinks geometrically toward a fixed point
    for a, b in zip(drift, drift[1:]):
        assert math.isclose(b, 0.5 * a, rel_tol=1e-12)
    assert params["layer000.w"][0] != pos_after_push


def test_step_only_touches_learnable_tensors():
    params = Parameters(
        {
            "layer000.w": np.array([0.0]),
            "layer001.running_mean": np.array([3.0]),
        }
    )
    opt = SGDMomentum.create(params, SGDConfig(lr=0.01, momentum=0.9))
    opt.step(params, {"layer000.w": np.array([1.0])})
    assert params["layer001.running_mean"][0] == 3.0
