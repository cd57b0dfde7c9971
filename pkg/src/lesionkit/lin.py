"""Dual fully-convolutional residual networks over lesion images: training on
the rotation and mirror corpora, multi-scale fused inference into coarse
per-class maps, and binary mask extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import imaging
from .augment import DatasetManifest, ManifestRecord
from .licu import LESION_CLASSES
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
from .nn.layers import resample_matrix
from .nn.loss import softmax, weighted_softmax_loss
from .rng import named_rng

MAP_CLASSES = ("background",) + LESION_CLASSES
MIN_INPUT_SIDE = 8  # below this the x8 encoder collapses to nothing useful


@dataclass(frozen=True)
class MiniFCRNSpec:
    """Shape of the small residual segmenter: one stem, three strided levels."""

    stem_width: int = 16
    blocks_per_level: int = 2
    level_widths: tuple = (32, 64, 64)
    classes: int = len(MAP_CLASSES)

    def __post_init__(self):
        if self.stem_width < 1 or any(w < 1 for w in self.level_widths):
            raise ValueError("widths must be >= 1")
        if len(self.level_widths) != 3:
            raise ValueError("exactly three downsampling levels")
        if self.blocks_per_level < 0:
            raise ValueError("blocks_per_level must be >= 0")
        if self.classes < 2:
            raise ValueError("need at least two output classes")


def build_mini_fcrn(spec: MiniFCRNSpec = MiniFCRNSpec()) -> NetworkSpec:
    """Fully-convolutional net: stem conv, then per level some identity-skip
    residual blocks followed by a stride-2 downsampling conv, then a bilinear
    decoder back to input resolution and a 1x1 conv to per-pixel class logits.

    Accepts any input >= a few pixels per side; no dense layers anywhere.
    """
    seq: list = [L.Conv(spec.stem_width, (3, 3), 1, 1), L.BatchNorm(), L.Relu()]
    width = spec.stem_width
    for level_width in spec.level_widths:
        for _ in range(spec.blocks_per_level):
            skip_from = len(seq) - 1  # block input, re-added after the second bn
            seq += [
                L.Conv(width, (3, 3), 1, 1),
                L.BatchNorm(),
                L.Relu(),
                L.Conv(width, (3, 3), 1, 1),
                L.BatchNorm(),
            ]
            seq.append(L.ResidualAdd(skip_from))
            seq.append(L.Relu())
        seq += [L.Conv(level_width, (3, 3), 2, 1), L.BatchNorm(), L.Relu()]
        width = level_width
    seq.append(L.UpsampleBilinear(8, match_input=True))
    seq.append(L.Conv(spec.classes, (1, 1), 1, 0))
    return NetworkSpec(tuple(seq), 3, "pixel", input_hw=None)


@dataclass(frozen=True)
class LINTrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    gamma: float = 0.1
    epochs: int = 6
    batch_size: int = 128
    class_weights: tuple = (1.0,) * len(MAP_CLASSES)
    val_fraction: float = 0.2  # 0 validates on the training set itself
    seed: int = 0
    train_side: int = 320  # square crop fed to the net during training
    stop_train_loss: float | None = None

    def sgd(self) -> SGDConfig:
        return SGDConfig(
            lr=self.lr,
            momentum=self.momentum,
            gamma=self.gamma,
            decay_every=max(1, -(-self.epochs // 2)),
        )


# loader(source_path) -> (image hwc in [0,1], boolean mask, class id 1..3)
SampleLoader = Callable[[str], tuple[np.ndarray, np.ndarray, int]]


def _mask_as_image(mask: np.ndarray) -> np.ndarray:
    return np.repeat(mask.astype(np.float64)[:, :, None], 3, axis=2)


def rasterize_record(
    record: ManifestRecord,
    image: np.ndarray,
    mask: np.ndarray,
    class_id: int,
    side: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Replay one manifest record and produce a square training pair.

    Returns the image as (3, side, side) and an integer label map with the
    class id painted inside the (replayed, cropped) mask, 0 elsewhere.
    """
    if not 1 <= class_id < len(MAP_CLASSES):
        raise ValueError(f"class id must be 1..{len(MAP_CLASSES) - 1}, got {class_id}")
    img = imaging.center_crop_resize(record.replay(image), side)
    # masks ride through the same geometry as a 3-channel float image
    m = imaging.center_crop_resize(record.replay(_mask_as_image(mask)), side)
    inside = m[:, :, 0] >= 0.5
    label_map = np.where(inside, class_id, 0).astype(np.int64)
    return img.transpose(2, 0, 1), label_map


def materialize_manifest(
    manifest: DatasetManifest, loader: SampleLoader, side: int
) -> tuple[np.ndarray, np.ndarray]:
    """Decode and replay a whole manifest into training arrays.

    Desk-scale corpora fit in memory; no streaming path.
    """
    images = np.empty((len(manifest), 3, side, side))
    label_maps = np.empty((len(manifest), side, side), dtype=np.int64)
    for i, rec in enumerate(manifest):
        img, mask, class_id = loader(rec.source_path)
        images[i], label_maps[i] = rasterize_record(rec, img, mask, class_id, side)
    return images, label_maps


def _check_lesion_batch(images: np.ndarray, label_maps: np.ndarray):
    images = np.asarray(images, dtype=np.float64)
    label_maps = np.asarray(label_maps)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"images must be (n, 3, h, w), got {images.shape}")
    n, _, h, w = images.shape
    if label_maps.shape != (n, h, w):
        raise ValueError(f"label maps must be ({n}, {h}, {w}), got {label_maps.shape}")
    return images, label_maps


def _pixel_rows(out: np.ndarray) -> np.ndarray:
    # (n, k, h, w) -> one score row per pixel, image-major row order
    n, k, h, w = out.shape
    return out.transpose(0, 2, 3, 1).reshape(n * h * w, k)


def _eval_pixels(net, params, images, label_maps, weights, batch_size, scratch=None):
    total_loss = 0.0
    hits = 0
    pixels = 0
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start : start + batch_size]
        chunk_labels = label_maps[start : start + batch_size].reshape(-1)
        out, _ = forward(net, params, chunk, mode="eval", scratch=scratch)
        scores = _pixel_rows(out)
        loss, _ = weighted_softmax_loss(scores, chunk_labels, weights)
        total_loss += loss * chunk_labels.size
        hits += int((scores.argmax(axis=1) == chunk_labels).sum())
        pixels += chunk_labels.size
    return total_loss / pixels, hits / pixels


def train_lin(
    net: NetworkSpec,
    images: np.ndarray,
    label_maps: np.ndarray,
    config: LINTrainConfig = LINTrainConfig(),
    stream: str = "dr",
    on_epoch=None,
) -> tuple[Parameters, list[dict]]:
    """Train one segmenter with per-pixel weighted softmax loss.

    Mirrors the patch classifier's trainer: shuffled split, SGD with momentum
    and stepped decay, best-validation-loss parameters returned with a
    per-epoch log. `stream` namespaces the rng so the two corpus nets draw
    independent initializations and shuffles from the same seed. `on_epoch`,
    when given, observes each log entry as it is appended.
    """
    images, label_maps = _check_lesion_batch(images, label_maps)
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    weights = np.asarray(config.class_weights, dtype=np.float64)
    if weights.shape != (len(MAP_CLASSES),):
        raise ValueError(f"need {len(MAP_CLASSES)} class weights, got {weights.shape}")
    if label_maps.min() < 0 or label_maps.max() >= len(MAP_CLASSES):
        raise ValueError("label maps contain ids outside the class range")

    order_all = named_rng(config.seed, f"lin.{stream}.split").permutation(n)
    n_val = int(round(n * config.val_fraction))
    if n_val == 0:
        train_idx, val_idx = order_all, order_all.copy()
    else:
        train_idx, val_idx = order_all[n_val:], order_all[:n_val]
    if train_idx.size == 0:
        raise ValueError("validation split consumed every sample")

    params = init_parameters(net, named_rng(config.seed, f"lin.{stream}.init"))
    if config.epochs == 0:
        return params, []
    opt = SGDMomentum.create(params, config.sgd())
    best_loss = np.inf
    best_params = params.copy()
    log: list[dict] = []
    scratch: dict = {}
    for epoch in range(1, config.epochs + 1):
        order = named_rng(config.seed, f"lin.{stream}.shuffle.{epoch}").permutation(train_idx)
        epoch_loss = 0.0
        epoch_pixels = 0
        for start in range(0, order.size, config.batch_size):
            take = order[start : start + config.batch_size]
            out, cache = forward(net, params, images[take], mode="train", scratch=scratch)
            scores = _pixel_rows(out)
            flat_labels = label_maps[take].reshape(-1)
            loss, dscores = weighted_softmax_loss(scores, flat_labels, weights)
            if not np.isfinite(loss):
                raise ValueError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            dout = dscores.reshape(take.size, out.shape[2], out.shape[3], out.shape[1])
            grads = backward(net, params, cache, dout.transpose(0, 3, 1, 2))
            opt.step(params, grads)
            epoch_loss += loss * flat_labels.size
            epoch_pixels += flat_labels.size
        epoch_loss /= epoch_pixels
        val_loss, val_acc = _eval_pixels(
            net, params, images[val_idx], label_maps[val_idx], weights, config.batch_size,
            scratch=scratch,
        )
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


def train_lin_pair(
    dr: DatasetManifest,
    dm: DatasetManifest,
    loader: SampleLoader,
    config: LINTrainConfig = LINTrainConfig(),
    net_spec: MiniFCRNSpec = MiniFCRNSpec(),
) -> tuple[Parameters, Parameters]:
    """Train the two-corpus pair: one net on the rotation corpus, one on the
    mirror corpus, identical architecture and schedule, independent rng
    streams. Rebuild the architecture with build_mini_fcrn(net_spec) to run
    inference with the returned parameters."""
    if len(dr) == 0 or len(dm) == 0:
        raise ValueError("both training manifests must be non-empty")
    net = build_mini_fcrn(net_spec)
    results = []
    for stream, manifest in (("dr", dr), ("dm", dm)):
        images, label_maps = materialize_manifest(manifest, loader, config.train_side)
        params, _ = train_lin(net, images, label_maps, config, stream=stream)
        results.append(params)
    return results[0], results[1]


@dataclass(frozen=True)
class ScaleSet:
    """Long-side targets for multi-scale inference."""

    long_sides: tuple = (300, 500)

    def __post_init__(self):
        if not self.long_sides:
            raise ValueError("scale set must be non-empty")
        if any(s < MIN_INPUT_SIDE for s in self.long_sides):
            raise ValueError(f"every scale must be >= {MIN_INPUT_SIDE}")


@dataclass(frozen=True)
class CoarseMaps:
    """Summed per-pixel class scores at the original image resolution."""

    raw: np.ndarray  # (h, w, 4): background + the three lesion classes

    def __post_init__(self):
        if self.raw.ndim != 3 or self.raw.shape[2] != len(MAP_CLASSES):
            raise ValueError(f"raw maps must be (h, w, {len(MAP_CLASSES)})")

    @property
    def h(self) -> int:
        return self.raw.shape[0]

    @property
    def w(self) -> int:
        return self.raw.shape[1]

    @property
    def lesion(self) -> np.ndarray:
        """The three lesion-class channels, background dropped."""
        return self.raw[:, :, 1:]


def _resize_channels(stack: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Bilinear-resize an (h, w, k) stack channel by channel."""
    h, w, k = stack.shape
    if (h, w) == (oh, ow):
        return stack.copy()
    rh = resample_matrix(h, oh)
    rw = resample_matrix(w, ow)
    out = np.empty((oh, ow, k))
    for ch in range(k):
        out[:, :, ch] = rh @ stack[:, :, ch] @ rw.T
    return out


def infer_multiscale(
    net: NetworkSpec,
    param_sets: list[Parameters] | tuple,
    image: np.ndarray,
    scales: ScaleSet = ScaleSet(),
    scratch: dict | None = None,
) -> CoarseMaps:
    """Fused inference: every (parameter set, scale) run contributes one
    per-pixel probability map, interpolated back to the input resolution and
    summed channelwise. Summation order is parameter-set major, then scales
    in their declared order, so the result is bit-deterministic.

    A caller looping over many images can pass one `scratch` dict to keep
    conv work buffers warm across calls."""
    image = imaging.check_image(image)
    if not param_sets:
        raise ValueError("need at least one parameter set")
    if scratch is None:
        scratch = {}
    h, w, _ = image.shape
    fused = np.zeros((h, w, len(MAP_CLASSES)))
    for params in param_sets:
        for side in scales.long_sides:
            scaled = imaging.resize_proportional(image, side)
            sh, sw, _ = scaled.shape
            if min(sh, sw) < MIN_INPUT_SIDE:
                raise ValueError(
                    f"image {h}x{w} resized for scale {side} is {sh}x{sw}, "
                    f"below the minimum side {MIN_INPUT_SIDE}"
                )
            out, _ = forward(net, params, scaled.transpose(2, 0, 1)[None], mode="eval", scratch=scratch)
            if out.shape[1] != len(MAP_CLASSES):
                raise ValueError(
                    f"net emits {out.shape[1]} channels, fused maps need {len(MAP_CLASSES)}"
                )
            probs = softmax(_pixel_rows(out)).reshape(sh, sw, len(MAP_CLASSES))
            fused += _resize_channels(probs, h, w)
    return CoarseMaps(fused)


def segment(maps: CoarseMaps) -> np.ndarray:
    """Binary lesion mask: lesion wherever a non-background channel wins the
    per-pixel argmax, reduced to the largest connected blob, holes filled."""
    lesion = maps.raw.argmax(axis=2) > 0
    return imaging.largest_component(lesion)
