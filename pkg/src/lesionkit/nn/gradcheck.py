"""Finite-difference verification of the analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import pixel_grad_unflatten, pixel_scores_flatten, weighted_softmax_loss
from .network import NetworkSpec, Parameters, backward, forward

REL_FLOOR = 1e-5  # denominator floor so near-zero gradients don't blow up the ratio


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict[str, float]  # worst sampled relative error for each learnable tensor


def _loss_and_grad(net, params, batch, labels, weights):
    out, cache = forward(net, params, batch, mode="train", update_running=False)
    if net.output == "pixel":
        scores = pixel_scores_flatten(out)
        flat_labels = np.asarray(labels).reshape(-1)
    else:
        scores = out.reshape(out.shape[0], -1)
        flat_labels = np.asarray(labels)
    loss, dscores = weighted_softmax_loss(scores, flat_labels, weights)
    if net.output == "pixel":
        dout = pixel_grad_unflatten(dscores, out.shape)
    else:
        dout = dscores.reshape(out.shape)
    return loss, cache, dout


def _loss_only(net, params, batch, labels, weights) -> float:
    out, _ = forward(net, params, batch, mode="train", update_running=False)
    if net.output == "pixel":
        scores = pixel_scores_flatten(out)
        flat_labels = np.asarray(labels).reshape(-1)
    else:
        scores = out.reshape(out.shape[0], -1)
        flat_labels = np.asarray(labels)
    loss, _ = weighted_softmax_loss(scores, flat_labels, weights)
    return loss


def finite_diff_grad_check(
    net: NetworkSpec,
    params: Parameters,
    batch: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    eps: float = 1e-5,
    samples_per_tensor: int = 6,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Perturbs a sampled subset of each learnable tensor by +-eps and compares
    (L(t+eps) - L(t-eps)) / (2 eps) against backward(). Double precision.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    batch = np.asarray(batch, dtype=np.float64)
    _, cache, dout = _loss_and_grad(net, params, batch, labels, weights)
    grads = backward(net, params, cache, dout)
    del cache
    per_tensor: dict[str, float] = {}
    for key in params.learnable_keys():
        tensor = params[key]
        n = tensor.size
        idx = rng.choice(n, size=min(samples_per_tensor, n), replace=False)
        flat = tensor.reshape(-1)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            lp = _loss_only(net, params, batch, labels, weights)
            flat[j] = orig - eps
            lm = _loss_only(net, params, batch, labels, weights)
            flat[j] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = grads[key].reshape(-1)[j]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)
            worst = max(worst, rel)
        per_tensor[key] = worst
    return GradCheckReport(max(per_tensor.values(), default=0.0), per_tensor)
