"""SGD with momentum and stepped learning-rate decay.

Update rule: v <- momentum * v - lr * g; theta <- theta + v.
The learning rate is multiplied by gamma at configured epoch boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import Parameters


@dataclass
class SGDConfig:
    lr: float = 0.01
    momentum: float = 0.9
    gamma: float = 0.1
    decay_every: int | None = None  # decay after every k-th epoch
    decay_at: tuple[int, ...] = ()  # explicit epoch numbers (1-based); overrides decay_every

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    @staticmethod
    def paper_defaults(total_epochs: int, lr: float = 0.01) -> "SGDConfig":
        # one decay halfway through unless the caller schedules otherwise
        return SGDConfig(lr=lr, decay_every=max(1, math.ceil(total_epochs / 2)))


@dataclass
class SGDMomentum:
    """Optimizer state: per-parameter velocity, current lr, epoch counter."""

    config: SGDConfig
    velocities: dict[str, np.ndarray] = field(default_factory=dict)
    lr: float = 0.0
    epoch: int = 0

    @staticmethod
    def create(params: Parameters, config: SGDConfig) -> "SGDMomentum":
        vel = {k: np.zeros_like(params[k]) for k in params.learnable_keys()}
        return SGDMomentum(config=config, velocities=vel, lr=config.lr)

    def step(self, params: Parameters, grads: dict[str, np.ndarray]):
        for k, v in self.velocities.items():
            g = grads[k]
            if g.shape != v.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {v.shape} for {k}")
            v *= self.config.momentum
            v -= self.lr * g
            params[k] += v

    def end_epoch(self):
        self.epoch += 1
        if self.config.decay_at:
            if self.epoch in self.config.decay_at:
                self.lr *= self.config.gamma
        elif self.config.decay_every and self.epoch % self.config.decay_every == 0:
            self.lr *= self.config.gamma


def sgd_update(params: Parameters, grads: dict[str, np.ndarray], state: SGDMomentum):
    """Single in-place update; thin function form of SGDMomentum.step."""
    state.step(params, grads)
