"""Patch-level feature classifier: three width variants of a 12-conv
network-in-network stack, weighted-softmax training, and challenge-format
feature emission.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import PATCH_CLASSES
from .nn import (
    NetworkSpec,
    Parameters,
    SGDConfig,
    SGDMomentum,
    backward,
    forward,
    init_parameters,
)
from .nn import layers as L
from .nn.loss import softmax, weighted_softmax_loss
from .rng import named_rng

PATCH_SIDE = 56
VARIANT_WIDTHS = {
    "standard": (16, 32, 64, 128),
    "narrow": (16, 16, 16, 32),
    "wide": (32, 64, 64, 128),
}
DEFAULT_CLASS_WEIGHTS = (1.0, 1.0, 5.0, 3.0, 8.0)  # B, PN, NN, MC, S


def build_lfn(variant: str = "standard", batchnorm: bool = True) -> NetworkSpec:
    """Four 3-conv stages (kernels 3, 1, 3), pooling between stages, then a
    single 5-way fully-connected head on the globally averaged features."""
    if variant not in VARIANT_WIDTHS:
        raise ValueError(f"variant must be one of {sorted(VARIANT_WIDTHS)}, got {variant!r}")
    widths = VARIANT_WIDTHS[variant]
    specs: list = []
    for stage, width in enumerate(widths):
        for kernel in (3, 1, 3):
            specs.append(L.Conv(width, (kernel, kernel), 1, 1 if kernel == 3 else 0))
            if batchnorm:
                specs.append(L.BatchNorm())
            specs.append(L.Relu())
        if stage < 3:
            specs.append(L.MaxPool(2, 2))
    specs.append(L.AvgPool(0, 1))  # global average over the 7x7 grid
    specs.append(L.Dense(len(PATCH_CLASSES)))
    return NetworkSpec(tuple(specs), 3, "image", input_hw=(PATCH_SIDE, PATCH_SIDE))


@dataclass(frozen=True)
class LFNTrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    gamma: float = 0.1
    epochs: int = 10
    batch_size: int = 128
    class_weights: tuple = DEFAULT_CLASS_WEIGHTS
    val_fraction: float = 0.2  # 0 validates on the training set itself
    seed: int = 0
    stop_train_loss: float | None = None  # early exit once train loss dips below

    def sgd(self) -> SGDConfig:
        return SGDConfig(
            lr=self.lr,
            momentum=self.momentum,
            gamma=self.gamma,
            decay_every=max(1, -(-self.epochs // 2)),
        )


def _check_patch_batch(images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != (3, PATCH_SIDE, PATCH_SIDE):
        raise ValueError(
            f"patches must be (n, 3, {PATCH_SIDE}, {PATCH_SIDE}), got {images.shape}"
        )
    return images


def split_train_val(
    n: int, val_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled split; val_fraction=0 reuses the training set."""
    order = named_rng(seed, "lfn.split").permutation(n)
    n_val = int(round(n * val_fraction))
    if n_val == 0:
        return order, order.copy()
    return order[n_val:], order[:n_val]


def _eval_split(net, params, images, labels, weights, batch_size, scratch=None):
    total_loss = 0.0
    hits = 0
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start : start + batch_size]
        chunk_labels = labels[start : start + batch_size]
        out, _ = forward(net, params, chunk, mode="eval", scratch=scratch)
        scores = out.reshape(out.shape[0], -1)
        loss, _ = weighted_softmax_loss(scores, chunk_labels, weights)
        total_loss += loss * chunk.shape[0]
        hits += int((scores.argmax(axis=1) == chunk_labels).sum())
    n = images.shape[0]
    return total_loss / n, hits / n


def train_lfn(
    net: NetworkSpec,
    images: np.ndarray,
    labels: np.ndarray,
    config: LFNTrainConfig = LFNTrainConfig(),
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    on_epoch=None,
) -> tuple[Parameters, list[dict]]:
    """SGD training with a held-out split; returns the parameters from the
    epoch with the best validation loss plus a per-epoch log.

    Passing val_images/val_labels pins an external validation set; the whole
    of `images` then trains and config.val_fraction is ignored. `on_epoch`,
    when given, observes each log entry as it is appended."""
    images = _check_patch_batch(images)
    labels = np.asarray(labels)
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty patch set")
    if labels.shape != (n,):
        raise ValueError(f"labels must be ({n},), got {labels.shape}")
    weights = np.asarray(config.class_weights, dtype=np.float64)

    if val_images is not None:
        val_x = _check_patch_batch(val_images)
        val_y = np.asarray(val_labels)
        if val_y.shape != (val_x.shape[0],):
            raise ValueError("validation labels must match validation images")
        train_idx = np.arange(n)
        val_idx = None
    else:
        train_idx, val_idx = split_train_val(n, config.val_fraction, config.seed)
        val_x, val_y = images[val_idx], labels[val_idx]
    present = set(int(v) for v in np.unique(labels[train_idx]))
    missing = [PATCH_CLASSES[i] for i in range(len(PATCH_CLASSES)) if i not in present]
    if missing:
        raise ValueError(f"classes missing from the training split: {missing}")

    params = init_parameters(net, named_rng(config.seed, "lfn.init"))
    if config.epochs == 0:
        return params, []
    opt = SGDMomentum.create(params, config.sgd())
    best_loss = np.inf
    best_params = params.copy()
    log: list[dict] = []
    scratch: dict = {}
    for epoch in range(1, config.epochs + 1):
        order = named_rng(config.seed, f"lfn.shuffle.{epoch}").permutation(train_idx)
        epoch_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            take = order[start : start + config.batch_size]
            out, cache = forward(net, params, images[take], mode="train", scratch=scratch)
            scores = out.reshape(out.shape[0], -1)
            loss, dscores = weighted_softmax_loss(scores, labels[take], weights)
            if not np.isfinite(loss):
                raise ValueError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            grads = backward(net, params, cache, dscores.reshape(out.shape))
            opt.step(params, grads)
            epoch_loss += loss * take.size
        epoch_loss /= order.size
        val_loss, val_acc = _eval_split(net, params, val_x, val_y, weights, config.batch_size, scratch=scratch)
        entry = {
            "epoch": epoch,
            "lr": opt.lr,
            "train_loss": epoch_loss,
            "val_loss": val_loss,
            "val_acc": val_acc,
        }
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        if val_loss < best_loss:
            best_loss = val_loss
            best_params = params.copy()
        opt.end_epoch()
        if config.stop_train_loss is not None and epoch_loss < config.stop_train_loss:
            break
    return best_params, log


def classify_patches(
    net: NetworkSpec,
    params: Parameters,
    patches: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """Per-patch class probabilities, eval-mode batch norm."""
    patches = _check_patch_batch(patches)
    rows = []
    scratch: dict = {}
    for start in range(0, patches.shape[0], batch_size):
        out, _ = forward(net, params, patches[start : start + batch_size], mode="eval", scratch=scratch)
        rows.append(softmax(out.reshape(out.shape[0], -1)))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, len(PATCH_CLASSES)))


FEATURE_COLUMNS = PATCH_CLASSES[1:]  # PN, NN, MC, S


def emit_feature_map(
    image_id: str,
    label_map: np.ndarray,
    probs: np.ndarray,
    tau: float | tuple = 0.5,
) -> tuple[list[dict], dict[int, dict[str, bool]]]:
    """Per-superpixel feature confidences and thresholded binary calls.

    probs rows must align with superpixel labels 0..n-1.
    """
    label_map = np.asarray(label_map)
    n = int(label_map.max()) + 1
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (n, len(PATCH_CLASSES)):
        raise ValueError(
            f"missing superpixel scores: need ({n}, {len(PATCH_CLASSES)}), got {probs.shape}"
        )
    taus = np.asarray(
        [tau] * len(FEATURE_COLUMNS) if np.isscalar(tau) else tau, dtype=np.float64
    )
    if taus.shape != (len(FEATURE_COLUMNS),):
        raise ValueError("tau must be a scalar or one threshold per feature class")
    rows = []
    calls: dict[int, dict[str, bool]] = {}
    for s in range(n):
        row = {"image_id": image_id, "superpixel_label": s}
        calls[s] = {}
        for j, feat in enumerate(FEATURE_COLUMNS):
            conf = float(probs[s, j + 1])
            row[feat] = conf
            calls[s][feat] = conf >= taus[j]
        rows.append(row)
    return rows, calls


def save_feature_rows(path: str | Path, rows: list[dict]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "superpixel_label"] + list(FEATURE_COLUMNS))
        for row in rows:
            writer.writerow(
                [row["image_id"], row["superpixel_label"]]
                + [repr(row[feat]) for feat in FEATURE_COLUMNS]
            )


def save_training_log(path: str | Path, log: list[dict]):
    with open(path, "w") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


def load_training_log(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


@dataclass
class PatchDataset:
    """Channel-first patch tensor plus integer labels (indexing PATCH_CLASSES)."""

    images: np.ndarray
    labels: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = _check_patch_batch(self.images)
        self.labels = np.asarray(self.labels)
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("one label per patch required")


def dataset_from_records(records) -> PatchDataset:
    """Stack superpixel PatchRecords (h, w, 3) into the training layout."""
    if not records:
        raise ValueError("no patch records")
    images = np.stack([r.pixels.transpose(2, 0, 1) for r in records])
    labels = np.array([PATCH_CLASSES.index(r.feature_class) for r in records])
    ids = [f"{r.image_id}:{r.label}" for r in records]
    return PatchDataset(images, labels, ids)
