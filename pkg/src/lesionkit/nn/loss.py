"""Class-weighted softmax cross-entropy.

loss = (1/N) * sum_i w[y_i] * (-log softmax(f_i)[y_i])

Normalizing by the batch size N rather than by the weight total means that
all-ones weights recover the plain unweighted loss exactly.
"""

from __future__ import annotations

import numpy as np


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_softmax_loss(
    scores: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Scalar loss and its gradient wrt the (n, k) score matrix.

    `weights` is one positive factor per class; None means all ones.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ValueError(f"scores must be (n, k), got shape {scores.shape}")
    n, k = scores.shape
    if n == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite class scores")
    if labels.shape != (n,):
        raise ValueError(f"labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    if weights is None:
        weights = np.ones(k)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (k,):
        raise ValueError(f"need one weight per class, got shape {weights.shape}")
    if np.any(weights <= 0):
        raise ValueError("class weights must be positive")

    rows = np.arange(n)
    wy = weights[labels]
    # log-softmax via log-sum-exp keeps the loss finite for extreme scores
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.sum(wy * (log_norm - shifted[rows, labels])) / n)
    p = softmax(scores)
    dscores = p * (wy / n)[:, None]
    dscores[rows, labels] -= wy / n
    return loss, dscores


def pixel_scores_flatten(logits: np.ndarray) -> np.ndarray:
    """(n, k, h, w) per-pixel logits -> (n*h*w, k) score rows."""
    n, k, h, w = logits.shape
    return np.ascontiguousarray(logits.transpose(0, 2, 3, 1).reshape(-1, k))


def pixel_grad_unflatten(dscores: np.ndarray, shape: tuple) -> np.ndarray:
    """Inverse layout of pixel_scores_flatten for the gradient."""
    n, k, h, w = shape
    return np.ascontiguousarray(dscores.reshape(n, h, w, k).transpose(0, 3, 1, 2))
