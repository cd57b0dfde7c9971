"""Frozen synthetic end-to-end runs.

Two recipes with pinned data sizes, architectures, and schedules: one trains
the patch classifier on generated texture patches, the other trains the dual
segmenter pair on generated blob lesions and scores held-out images through
the full mask + index chain. Each run is a pure function of its seed and its
result carries sha256 digests over logs, parameters, and outputs, so two runs
can be compared bit for bit.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from .augment import DatasetManifest, ManifestRecord, build_dm, build_dr, lesion_plan
from .imaging import distance_map
from .lfn import LFNTrainConfig, build_lfn, train_lfn
from .licu import LESION_CLASSES, compute_index
from .lin import (
    LINTrainConfig,
    MiniFCRNSpec,
    ScaleSet,
    build_mini_fcrn,
    infer_multiscale,
    materialize_manifest,
    segment,
    train_lin,
)
from .metrics import confusion, seg_metrics
from .synthetic import make_lesion_dataset, make_patch_dataset

PATCH_TRAIN_PER_CLASS = 2000
PATCH_VAL_PER_CLASS = 400
PATCH_VARIANT = "narrow"

LESION_BASE_COUNT = 48  # 16 per class after cycling
LESION_IMAGE_SIDE = 160
LESION_ROTATION_STEP = 90  # 4 angles: 192 rotation entries + 192 mirrored
LESION_HELDOUT_COUNT = 100
LESION_CORRUPT_FRACTION = 0.5  # half the held-out set gets a misleading border
LESION_NET = MiniFCRNSpec(stem_width=12, blocks_per_level=1, level_widths=(24, 48, 48))
LESION_SCALES = ScaleSet((128, 160))
LESION_BATCH = 8
LESION_TRAIN_SIDE = 160


def tune_allocator(threshold: int = 1 << 30) -> bool:
    """Keep big transient buffers on the heap instead of fresh mmaps.

    Per-step activation tensors sit above glibc's default mmap threshold, so
    every training step pays mmap + page-fault + munmap for hundreds of MB.
    Raising the mmap and trim thresholds lets the allocator recycle that
    memory. Returns False where mallopt is unavailable (non-glibc).
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        m_trim_threshold, m_mmap_threshold = -1, -3
        ok = libc.mallopt(m_mmap_threshold, threshold)
        ok &= libc.mallopt(m_trim_threshold, threshold)
        return bool(ok)
    except (OSError, AttributeError):
        return False


def _hash_array(h, arr: np.ndarray):
    arr = np.ascontiguousarray(arr)
    h.update(arr.dtype.str.encode())
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())


def params_digest(params) -> str:
    """sha256 over parameter names, dtypes, shapes, and raw bytes."""
    tensors = getattr(params, "tensors", params)
    h = hashlib.sha256()
    for key in sorted(tensors):
        h.update(key.encode())
        _hash_array(h, tensors[key])
    return h.hexdigest()


def json_digest(obj) -> str:
    """sha256 of the sorted-keys JSON serialization."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class LFNRunResult:
    log: list
    best_val_acc: float
    params_digest: str
    log_digest: str
    elapsed_seconds: float


def run_lfn_synthetic(seed: int = 0, on_epoch=None) -> LFNRunResult:
    """Train the narrow patch classifier on generated texture patches.

    2000 patches per class train against a disjoint 400-per-class validation
    stream under the default schedule. `on_epoch` observes log entries as
    they are appended; it has no effect on the result.
    """
    tune_allocator()
    t0 = time.monotonic()
    train_x, train_y = make_patch_dataset(
        PATCH_TRAIN_PER_CLASS, seed, stream="synthetic.patches.train"
    )
    val_x, val_y = make_patch_dataset(
        PATCH_VAL_PER_CLASS, seed, stream="synthetic.patches.val"
    )
    net = build_lfn(PATCH_VARIANT)
    params, log = train_lfn(
        net,
        train_x,
        train_y,
        LFNTrainConfig(seed=seed),
        val_images=val_x,
        val_labels=val_y,
        on_epoch=on_epoch,
    )
    return LFNRunResult(
        log=log,
        best_val_acc=max(e["val_acc"] for e in log),
        params_digest=params_digest(params),
        log_digest=json_digest(log),
        elapsed_seconds=time.monotonic() - t0,
    )


@dataclass(frozen=True)
class LINRunResult:
    dr_log: list
    dm_log: list
    mean_ja: float
    acc: float  # distance-weighted index accuracy over all held-out images
    acc_uniform: float  # uniform-weight baseline accuracy
    corrupted_acc: float  # same two, restricted to misleading-border images
    corrupted_acc_uniform: float
    n_corrupted: int
    params_digest_dr: str
    params_digest_dm: str
    log_digest: str
    outputs_digest: str
    elapsed_seconds: float


def run_lin_synthetic(seed: int = 0, on_epoch=None) -> LINRunResult:
    """Train the dual segmenter pair on generated blobs; score held-out images.

    48 base lesions expand through 90-degree rotations into a 192-entry
    rotation corpus plus its mirrored copy; one net trains on each, matching
    the paired trainer's streams. 100 held-out images (about half with a
    deliberately misleading border ring) then run through fused two-scale
    inference, mask extraction, and the distance-weighted index; a
    uniform-weight index is scored alongside as the baseline. An image whose
    predicted mask comes back empty is indexed over the whole frame instead.
    """
    tune_allocator()
    t0 = time.monotonic()
    base = make_lesion_dataset(
        LESION_BASE_COUNT, seed, side=LESION_IMAGE_SIDE, stream="synthetic.lesions.train"
    )
    records = [
        ManifestRecord(
            item_id=f"syn{i:03d}",
            source_path=str(i),
            label=LESION_CLASSES[s["cls"] - 1],
        )
        for i, s in enumerate(base)
    ]

    def loader(path: str):
        s = base[int(path)]
        return s["image"], s["mask"], s["cls"]

    step = LESION_ROTATION_STEP
    dr = build_dr(DatasetManifest(records), lesion_plan(step, step, step))
    dm = build_dm(dr, seed)
    net = build_mini_fcrn(LESION_NET)
    config = LINTrainConfig(batch_size=LESION_BATCH, train_side=LESION_TRAIN_SIDE, seed=seed)
    param_sets = []
    logs = []
    for stream, manifest in (("dr", dr), ("dm", dm)):
        images, label_maps = materialize_manifest(manifest, loader, config.train_side)
        params, log = train_lin(net, images, label_maps, config, stream=stream, on_epoch=on_epoch)
        param_sets.append(params)
        logs.append(log)

    heldout = make_lesion_dataset(
        LESION_HELDOUT_COUNT,
        seed,
        side=LESION_IMAGE_SIDE,
        corrupt_fraction=LESION_CORRUPT_FRACTION,
        stream="synthetic.lesions.heldout",
    )
    scratch: dict = {}
    out_h = hashlib.sha256()
    ja = []
    hits = hits_uniform = 0
    c_hits = c_hits_uniform = n_corrupted = 0
    for s in heldout:
        maps = infer_multiscale(net, param_sets, s["image"], LESION_SCALES, scratch=scratch)
        mask = segment(maps)
        ja.append(seg_metrics(confusion(mask, s["mask"]))["JA"])
        area = mask if mask.any() else np.ones(mask.shape, dtype=bool)
        index = compute_index(maps.lesion, distance_map(area), area)
        uniform = compute_index(maps.lesion, np.ones(area.shape), area)
        truth = LESION_CLASSES[s["cls"] - 1]
        hit = index.predicted_class == truth
        hit_uniform = uniform.predicted_class == truth
        hits += hit
        hits_uniform += hit_uniform
        if s["corrupted"]:
            n_corrupted += 1
            c_hits += hit
            c_hits_uniform += hit_uniform
        _hash_array(out_h, mask)
        _hash_array(out_h, index.as_array())
        _hash_array(out_h, uniform.as_array())
    _hash_array(out_h, np.asarray(ja))

    n = len(heldout)
    return LINRunResult(
        dr_log=logs[0],
        dm_log=logs[1],
        mean_ja=float(np.mean(ja)),
        acc=hits / n,
        acc_uniform=hits_uniform / n,
        corrupted_acc=c_hits / n_corrupted if n_corrupted else float("nan"),
        corrupted_acc_uniform=c_hits_uniform / n_corrupted if n_corrupted else float("nan"),
        n_corrupted=n_corrupted,
        params_digest_dr=params_digest(param_sets[0]),
        params_digest_dm=params_digest(param_sets[1]),
        log_digest=json_digest({"dr": logs[0], "dm": logs[1]}),
        outputs_digest=out_h.hexdigest(),
        elapsed_seconds=time.monotonic() - t0,
    )
