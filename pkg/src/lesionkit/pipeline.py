"""Batch pipeline stages over on-disk datasets.

Configuration is a ``key = value`` text file; command-line flags override
file values, and the output root can also come from the LESIONKIT_OUTPUT
environment variable. Every stage validates its configuration and inputs
up front and reports every problem at once, writes each output through a
temp file renamed into place, and finishes by writing a manifest listing
what it produced. Re-running a stage with unchanged inputs and seed
produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import imaging
from .augment import (
    balance_patches,
    build_dm,
    build_dr,
    lesion_plan,
    load_manifest,
    patch_plan,
    save_manifest,
)
from .lfn import (
    LFNTrainConfig,
    build_lfn,
    classify_patches,
    dataset_from_records,
    emit_feature_map,
    save_feature_rows,
    save_training_log,
    train_lfn,
)
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
from .metrics import average_precision, confusion, dataset_report, roc_auc, seg_metrics
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.network import spec_to_text
from .superpixel import (
    extract_patches,
    load_annotations,
    load_label_map,
    save_label_map,
    slic,
)

OUTPUT_ENV = "LESIONKIT_OUTPUT"
IMAGE_EXTS = (".png", ".jpg", ".jpeg")


class StageError(Exception):
    """Carries every problem a stage found, not just the first."""

    def __init__(self, stage: str, problems: list[str]):
        self.stage = stage
        self.problems = list(problems)
        super().__init__(f"{stage}: " + "; ".join(self.problems))


# ------------------------------------------------------------- configuration

@dataclass
class PipelineConfig:
    """Paths, sizes, and per-network training settings for the pipeline.

    Unset paths stay None; each stage demands the ones it needs. `lfn` and
    `lin` hold keyword overrides for the respective training configs (plus
    `variant` for the patch net and the net-size keys for the segmenter).
    """

    images: Path | None = None
    masks: Path | None = None
    superpixels: Path | None = None
    annotations: Path | None = None
    truth: Path | None = None
    manifest: Path | None = None
    manifest_dr: Path | None = None
    manifest_dm: Path | None = None
    predictions: Path | None = None
    checkpoint: Path | None = None
    checkpoint_dr: Path | None = None
    checkpoint_dm: Path | None = None
    output: Path | None = None
    seed: int | None = None
    scales: tuple = (300, 500)
    preprocess_long_side: int = 320
    superpixel_count: int = 200
    superpixel_compactness: float = 10.0
    rotation_steps: tuple = (18, 18, 45)  # melanoma, keratosis, nevus degrees
    patch_targets: tuple = (87089, 77325)  # B, PN down-sample sizes
    tau: float = 0.5
    lfn: dict = field(default_factory=dict)
    lin: dict = field(default_factory=dict)


def _ints(text: str) -> tuple:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple:
    return tuple(float(v.strip()) for v in text.split(",") if v.strip())


_PATH_KEYS = (
    "images",
    "masks",
    "superpixels",
    "annotations",
    "truth",
    "manifest",
    "manifest_dr",
    "manifest_dm",
    "predictions",
    "checkpoint",
    "checkpoint_dr",
    "checkpoint_dm",
    "output",
)

_SCALAR_KEYS = {
    "seed": int,
    "scales": _ints,
    "preprocess_long_side": int,
    "superpixel_count": int,
    "superpixel_compactness": float,
    "rotation_steps": _ints,
    "patch_targets": _ints,
    "tau": float,
}

_LFN_KEYS = {
    "variant": str,
    "lr": float,
    "momentum": float,
    "gamma": float,
    "epochs": int,
    "batch_size": int,
    "class_weights": _floats,
    "val_fraction": float,
    "stop_train_loss": float,
}

_LIN_KEYS = {
    "lr": float,
    "momentum": float,
    "gamma": float,
    "epochs": int,
    "batch_size": int,
    "class_weights": _floats,
    "val_fraction": float,
    "train_side": int,
    "stop_train_loss": float,
    "stem_width": int,
    "blocks_per_level": int,
    "level_widths": _ints,
}


def parse_config_text(text: str) -> tuple[dict[str, str], list[str]]:
    """``key = value`` lines into a dict; '#' comments and blanks skipped."""
    values: dict[str, str] = {}
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            problems.append(f"config line {lineno}: expected key = value, got {line!r}")
            continue
        if key in values:
            problems.append(f"config line {lineno}: duplicate key {key!r}")
            continue
        values[key] = value.strip()
    return values, problems


def build_config(values: dict[str, str], env: dict | None = None) -> PipelineConfig:
    """Typed PipelineConfig from raw string settings.

    Raises StageError("config", ...) listing every unknown key and every
    value that fails to coerce. The output root falls back to the
    LESIONKIT_OUTPUT environment variable when not set explicitly.
    """
    env = os.environ if env is None else env
    cfg = PipelineConfig()
    problems: list[str] = []
    for key, raw in values.items():
        try:
            if key in _PATH_KEYS:
                setattr(cfg, key, Path(raw))
            elif key in _SCALAR_KEYS:
                setattr(cfg, key, _SCALAR_KEYS[key](raw))
            elif key.startswith("lfn.") and key[4:] in _LFN_KEYS:
                cfg.lfn[key[4:]] = _LFN_KEYS[key[4:]](raw)
            elif key.startswith("lin.") and key[4:] in _LIN_KEYS:
                cfg.lin[key[4:]] = _LIN_KEYS[key[4:]](raw)
            else:
                problems.append(f"unknown setting {key!r}")
        except ValueError:
            problems.append(f"{key}: cannot parse {raw!r}")
    if cfg.output is None and env.get(OUTPUT_ENV):
        cfg.output = Path(env[OUTPUT_ENV])
    if problems:
        raise StageError("config", problems)
    return cfg


def load_config(path: str | Path, env: dict | None = None) -> PipelineConfig:
    values, problems = parse_config_text(Path(path).read_text())
    if problems:
        raise StageError("config", problems)
    return build_config(values, env=env)


# ------------------------------------------------------------ shared helpers

def _existing(cfg: PipelineConfig, name: str, problems: list[str], kind: str) -> Path | None:
    value = getattr(cfg, name)
    if value is None:
        problems.append(f"{name} is not configured")
        return None
    p = Path(value)
    if kind == "directory" and not p.is_dir():
        problems.append(f"{name}: no such directory {p}")
    elif kind == "file" and not p.is_file():
        problems.append(f"{name}: no such file {p}")
    return p


def _out_root(cfg: PipelineConfig, problems: list[str]) -> Path | None:
    if cfg.output is None:
        problems.append(f"output is not configured (flag, config, or {OUTPUT_ENV})")
        return None
    return Path(cfg.output)


def _need_seed(cfg: PipelineConfig, problems: list[str]):
    if cfg.seed is None:
        problems.append("seed must be set for this stage")


def _raise_if(stage: str, problems: list[str]):
    if problems:
        raise StageError(stage, problems)


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTS)


def _save_atomic(path: Path, saver):
    """Let `saver` write a temp sibling, then rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    saver(tmp)
    os.replace(tmp, path)


def _write_json(path: Path, obj):
    data = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    _save_atomic(path, lambda tmp: tmp.write_text(data))


def _finish(stage: str, root: Path, produced: list[Path]) -> dict:
    manifest = {
        "stage": stage,
        "outputs": sorted(str(p.relative_to(root)) for p in produced),
    }
    _write_json(root / "manifests" / f"{stage}.json", manifest)
    return manifest


def load_truth(path: str | Path) -> dict[str, int]:
    """Diagnosis sheet: image_id, melanoma, seborrheic_keratosis columns with
    0/1 flags; a row with neither flag set is a nevus. Returns class ids
    1 (melanoma), 2 (keratosis), 3 (nevus) per image id."""
    out: dict[str, int] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["image_id", "melanoma", "seborrheic_keratosis"]:
            raise ValueError(f"unexpected truth header {header}")
        for row in reader:
            if len(row) != 3:
                raise ValueError(f"truth row needs 3 columns, got {row}")
            mel, sk = float(row[1]) >= 0.5, float(row[2]) >= 0.5
            if mel and sk:
                raise ValueError(f"{row[0]}: both diagnosis flags set")
            out[row[0]] = 1 if mel else (2 if sk else 3)
    return out


INDEX_COLUMNS = ("image_id",) + LESION_CLASSES


def load_indexes(path: str | Path) -> dict[str, tuple]:
    """Classification CSV back into {image_id: (mel, sk, nevus)}."""
    out: dict[str, tuple] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(INDEX_COLUMNS):
            raise ValueError(f"unexpected index header {header}")
        for row in reader:
            if len(row) != 4:
                raise ValueError(f"index row needs 4 columns, got {row}")
            out[row[0]] = tuple(float(v) for v in row[1:4])
    return out


def _resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # masks ride through the image resampler as a 3-channel float
    as_img = np.repeat(mask.astype(np.float64)[:, :, None], 3, axis=2)
    return imaging.bilinear_resize(as_img, out_h, out_w)[:, :, 0] >= 0.5


def _lfn_setup(cfg: PipelineConfig) -> tuple[str, LFNTrainConfig]:
    kw = dict(cfg.lfn)
    variant = kw.pop("variant", "standard")
    return variant, LFNTrainConfig(seed=cfg.seed, **kw)


def _lin_setup(cfg: PipelineConfig) -> tuple[MiniFCRNSpec, LINTrainConfig]:
    kw = dict(cfg.lin)
    spec_kw = {
        k: kw.pop(k)
        for k in ("stem_width", "blocks_per_level", "level_widths")
        if k in kw
    }
    return MiniFCRNSpec(**spec_kw), LINTrainConfig(seed=cfg.seed, **kw)


def _load_pair_checkpoints(cfg: PipelineConfig, stage: str, problems: list[str]):
    dr_path = _existing(cfg, "checkpoint_dr", problems, "file")
    dm_path = _existing(cfg, "checkpoint_dm", problems, "file")
    _raise_if(stage, problems)
    net, params_dr = load_checkpoint(dr_path)
    net_dm, params_dm = load_checkpoint(dm_path)
    if spec_to_text(net_dm) != spec_to_text(net):
        raise StageError(stage, ["the two checkpoints describe different networks"])
    return net, [params_dr, params_dm]


# ------------------------------------------------------------------- stages

def cmd_preprocess(cfg: PipelineConfig) -> dict:
    """Normalize raw images (and masks when configured) into the working
    layout, capping the long side at `preprocess_long_side` (no upscaling)."""
    stage = "preprocess"
    problems: list[str] = []
    images_dir = _existing(cfg, "images", problems, "directory")
    root = _out_root(cfg, problems)
    masks_dir = Path(cfg.masks) if cfg.masks is not None else None
    if masks_dir is not None and not masks_dir.is_dir():
        problems.append(f"masks: no such directory {masks_dir}")
        masks_dir = None
    files = _list_images(images_dir) if images_dir and images_dir.is_dir() else []
    if images_dir and images_dir.is_dir() and not files:
        problems.append(f"images: no image files in {images_dir}")
    if masks_dir is not None:
        for f in files:
            if not (masks_dir / f"{f.stem}.png").is_file():
                problems.append(f"masks: no mask for {f.stem}")
    _raise_if(stage, problems)

    produced = []
    for f in files:
        img = imaging.load_image(f)
        if max(img.shape[:2]) > cfg.preprocess_long_side:
            img = imaging.resize_proportional(img, cfg.preprocess_long_side)
        dest = root / "preprocessed" / "images" / f"{f.stem}.png"
        _save_atomic(dest, lambda tmp, img=img: imaging.save_image(tmp, img))
        produced.append(dest)
        if masks_dir is not None:
            mask = imaging.load_mask(masks_dir / f"{f.stem}.png")
            if mask.shape != img.shape[:2]:
                mask = _resize_mask(mask, img.shape[0], img.shape[1])
            mdest = root / "preprocessed" / "masks" / f"{f.stem}.png"
            _save_atomic(mdest, lambda tmp, mask=mask: imaging.save_mask(tmp, mask))
            produced.append(mdest)
    return _finish(stage, root, produced)


def cmd_augment(cfg: PipelineConfig, kind: str) -> dict:
    """Expand a source manifest: `lesion` builds the rotation corpus and its
    mirrored copy, `patch` balances the five patch classes."""
    stage = f"augment-{kind}"
    problems: list[str] = []
    if kind not in ("lesion", "patch"):
        raise StageError("augment", [f"kind must be lesion or patch, got {kind!r}"])
    src_path = _existing(cfg, "manifest", problems, "file")
    root = _out_root(cfg, problems)
    _need_seed(cfg, problems)
    _raise_if(stage, problems)
    try:
        src = load_manifest(src_path)
    except ValueError as e:
        raise StageError(stage, [f"manifest: {e}"])

    produced = []
    if kind == "lesion":
        plan = lesion_plan(*cfg.rotation_steps)
        try:
            dr = build_dr(src, plan)
        except ValueError as e:
            raise StageError(stage, [str(e)])
        dm = build_dm(dr, cfg.seed)
        for name, manifest in (("dr", dr), ("dm", dm)):
            dest = root / "augment" / f"{name}.csv"
            _save_atomic(dest, lambda tmp, m=manifest: save_manifest(tmp, m))
            produced.append(dest)
    else:
        plan = patch_plan(*cfg.patch_targets)
        try:
            balanced = balance_patches(src, plan, cfg.seed)
        except ValueError as e:
            raise StageError(stage, [str(e)])
        dest = root / "augment" / "balanced.csv"
        _save_atomic(dest, lambda tmp: save_manifest(tmp, balanced))
        produced.append(dest)
    return _finish(stage, root, produced)


def cmd_superpixel(cfg: PipelineConfig) -> dict:
    """Cluster every image into superpixels; write index-encoded label maps."""
    stage = "superpixel"
    problems: list[str] = []
    images_dir = _existing(cfg, "images", problems, "directory")
    root = _out_root(cfg, problems)
    files = _list_images(images_dir) if images_dir and images_dir.is_dir() else []
    if images_dir and images_dir.is_dir() and not files:
        problems.append(f"images: no image files in {images_dir}")
    _raise_if(stage, problems)

    produced = []
    for f in files:
        img = imaging.load_image(f)
        labels = slic(img, cfg.superpixel_count, m=cfg.superpixel_compactness)
        dest = root / "superpixels" / f"{f.stem}.png"
        _save_atomic(dest, lambda tmp, labels=labels: save_label_map(tmp, labels))
        produced.append(dest)
    return _finish(stage, root, produced)


def cmd_train_lfn(cfg: PipelineConfig) -> dict:
    """Extract annotated superpixel patches and train the feature classifier."""
    stage = "train-lfn"
    problems: list[str] = []
    images_dir = _existing(cfg, "images", problems, "directory")
    sp_dir = _existing(cfg, "superpixels", problems, "directory")
    ann_path = _existing(cfg, "annotations", problems, "file")
    root = _out_root(cfg, problems)
    _need_seed(cfg, problems)
    files = _list_images(images_dir) if images_dir and images_dir.is_dir() else []
    if images_dir and images_dir.is_dir() and not files:
        problems.append(f"images: no image files in {images_dir}")
    if sp_dir and sp_dir.is_dir():
        for f in files:
            if not (sp_dir / f"{f.stem}.png").is_file():
                problems.append(f"superpixels: no label map for {f.stem}")
    _raise_if(stage, problems)
    try:
        annotations = load_annotations(ann_path)
        variant, train_config = _lfn_setup(cfg)
    except (ValueError, TypeError) as e:
        raise StageError(stage, [str(e)])

    records = []
    for f in files:
        img = imaging.load_image(f)
        labels = load_label_map(sp_dir / f"{f.stem}.png")
        if labels.shape != img.shape[:2]:
            problems.append(f"{f.stem}: label map {labels.shape} vs image {img.shape[:2]}")
            continue
        records.extend(extract_patches(img, labels, annotations.get(f.stem), image_id=f.stem))
    _raise_if(stage, problems)

    dataset = dataset_from_records(records)
    net = build_lfn(variant)
    params, log = train_lfn(net, dataset.images, dataset.labels, train_config)
    ckpt = root / "models" / "lfn.ckpt"
    _save_atomic(ckpt, lambda tmp: save_checkpoint(tmp, net, params))
    log_path = root / "models" / "lfn_log.jsonl"
    _save_atomic(log_path, lambda tmp: save_training_log(tmp, log))
    return _finish(stage, root, [ckpt, log_path])


def cmd_train_lin(cfg: PipelineConfig) -> dict:
    """Train the segmenter pair from the two augmented corpus manifests."""
    stage = "train-lin"
    problems: list[str] = []
    dr_path = _existing(cfg, "manifest_dr", problems, "file")
    dm_path = _existing(cfg, "manifest_dm", problems, "file")
    images_dir = _existing(cfg, "images", problems, "directory")
    masks_dir = _existing(cfg, "masks", problems, "directory")
    truth_path = _existing(cfg, "truth", problems, "file")
    root = _out_root(cfg, problems)
    _need_seed(cfg, problems)
    _raise_if(stage, problems)
    try:
        manifests = {"dr": load_manifest(dr_path), "dm": load_manifest(dm_path)}
        truth = load_truth(truth_path)
        net_spec, train_config = _lin_setup(cfg)
    except (ValueError, TypeError) as e:
        raise StageError(stage, [str(e)])

    for name, manifest in manifests.items():
        for rec in manifest:
            stem = Path(rec.source_path).stem
            if not (images_dir / rec.source_path).is_file():
                problems.append(f"{name}: missing image {rec.source_path}")
            if not (masks_dir / f"{stem}.png").is_file():
                problems.append(f"{name}: missing mask for {stem}")
            if stem not in truth:
                problems.append(f"{name}: no diagnosis row for {stem}")
    _raise_if(stage, problems)

    def loader(source_path: str):
        img = imaging.load_image(images_dir / source_path)
        stem = Path(source_path).stem
        mask = imaging.load_mask(masks_dir / f"{stem}.png")
        return img, mask, truth[stem]

    net = build_mini_fcrn(net_spec)
    produced = []
    for name, manifest in manifests.items():
        images, label_maps = materialize_manifest(manifest, loader, train_config.train_side)
        params, log = train_lin(net, images, label_maps, train_config, stream=name)
        ckpt = root / "models" / f"lin_{name}.ckpt"
        _save_atomic(ckpt, lambda tmp, p=params: save_checkpoint(tmp, net, p))
        log_path = root / "models" / f"lin_{name}_log.jsonl"
        _save_atomic(log_path, lambda tmp, lg=log: save_training_log(tmp, lg))
        produced += [ckpt, log_path]
    return _finish(stage, root, produced)


def _fused_maps_masks(cfg: PipelineConfig, stage: str):
    """Validation plus fused inference shared by the two inference stages."""
    problems: list[str] = []
    images_dir = _existing(cfg, "images", problems, "directory")
    root = _out_root(cfg, problems)
    files = _list_images(images_dir) if images_dir and images_dir.is_dir() else []
    if images_dir and images_dir.is_dir() and not files:
        problems.append(f"images: no image files in {images_dir}")
    net, param_sets = _load_pair_checkpoints(cfg, stage, problems)
    scratch: dict = {}
    for f in files:
        img = imaging.load_image(f)
        maps = infer_multiscale(net, param_sets, img, ScaleSet(cfg.scales), scratch=scratch)
        yield root, f.stem, maps, segment(maps)


def cmd_infer_segment(cfg: PipelineConfig) -> dict:
    """Fused multi-scale inference into binary lesion masks."""
    stage = "infer-segment"
    produced = []
    root = None
    for root, stem, _, mask in _fused_maps_masks(cfg, stage):
        dest = root / "segmentation" / f"{stem}.png"
        _save_atomic(dest, lambda tmp, mask=mask: imaging.save_mask(tmp, mask))
        produced.append(dest)
    return _finish(stage, root, produced)


def cmd_infer_classify(cfg: PipelineConfig) -> dict:
    """Per-image three-class indexes from distance-weighted map averaging.

    An image whose predicted mask comes back empty is indexed over the whole
    frame instead of failing the batch."""
    stage = "infer-classify"
    rows = []
    root = None
    for root, stem, maps, mask in _fused_maps_masks(cfg, stage):
        area = mask if mask.any() else np.ones(mask.shape, dtype=bool)
        index = compute_index(maps.lesion, imaging.distance_map(area), area)
        rows.append((stem, index.melanoma, index.seborrheic_keratosis, index.nevus))

    def write_rows(tmp: Path):
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(INDEX_COLUMNS)
            for stem, mel, sk, nev in rows:
                writer.writerow([stem, repr(mel), repr(sk), repr(nev)])

    dest = root / "classification" / "indexes.csv"
    _save_atomic(dest, write_rows)
    return _finish(stage, root, [dest])


def cmd_infer_features(cfg: PipelineConfig) -> dict:
    """Score every superpixel patch and emit the per-feature confidence CSV."""
    stage = "infer-features"
    problems: list[str] = []
    images_dir = _existing(cfg, "images", problems, "directory")
    sp_dir = _existing(cfg, "superpixels", problems, "directory")
    ckpt_path = _existing(cfg, "checkpoint", problems, "file")
    root = _out_root(cfg, problems)
    files = _list_images(images_dir) if images_dir and images_dir.is_dir() else []
    if images_dir and images_dir.is_dir() and not files:
        problems.append(f"images: no image files in {images_dir}")
    if sp_dir and sp_dir.is_dir():
        for f in files:
            if not (sp_dir / f"{f.stem}.png").is_file():
                problems.append(f"superpixels: no label map for {f.stem}")
    _raise_if(stage, problems)
    net, params = load_checkpoint(ckpt_path)

    rows = []
    for f in files:
        img = imaging.load_image(f)
        labels = load_label_map(sp_dir / f"{f.stem}.png")
        if labels.shape != img.shape[:2]:
            problems.append(f"{f.stem}: label map {labels.shape} vs image {img.shape[:2]}")
            continue
        records = extract_patches(img, labels, None, image_id=f.stem)
        patches = np.stack([r.pixels.transpose(2, 0, 1) for r in records])
        probs = classify_patches(net, params, patches)
        image_rows, _ = emit_feature_map(f.stem, labels, probs, tau=cfg.tau)
        rows.extend(image_rows)
    _raise_if(stage, problems)

    dest = root / "features" / "features.csv"
    _save_atomic(dest, lambda tmp: save_feature_rows(tmp, rows))
    return _finish(stage, root, [dest])


def cmd_evaluate_task1(cfg: PipelineConfig) -> dict:
    """Segmentation scoring: predicted masks against ground-truth masks."""
    stage = "evaluate-task1"
    problems: list[str] = []
    pred_dir = _existing(cfg, "predictions", problems, "directory")
    gt_dir = _existing(cfg, "masks", problems, "directory")
    root = _out_root(cfg, problems)
    gt_files = _list_images(gt_dir) if gt_dir and gt_dir.is_dir() else []
    if gt_dir and gt_dir.is_dir() and not gt_files:
        problems.append(f"masks: no mask files in {gt_dir}")
    if pred_dir and pred_dir.is_dir():
        for f in gt_files:
            if not (pred_dir / f"{f.stem}.png").is_file():
                problems.append(f"predictions: no mask for {f.stem}")
    _raise_if(stage, problems)

    per_item = {}
    for f in gt_files:
        gt = imaging.load_mask(f)
        pred = imaging.load_mask(pred_dir / f"{f.stem}.png")
        if pred.shape != gt.shape:
            problems.append(f"{f.stem}: prediction {pred.shape} vs truth {gt.shape}")
            continue
        per_item[f.stem] = seg_metrics(confusion(pred, gt))
    _raise_if(stage, problems)

    report = dataset_report(per_item, "JA")
    dest = root / "evaluation" / "task1.json"
    _write_json(dest, report)
    return _finish(stage, root, [dest])


def cmd_evaluate_classification(cfg: PipelineConfig, task: str) -> dict:
    """Ranked binary scoring: task2 screens melanoma, task3 keratosis."""
    stage = f"evaluate-{task}"
    target_class = {"task2": 1, "task3": 2}.get(task)
    if target_class is None:
        raise StageError("evaluate", [f"task must be task2 or task3, got {task!r}"])
    score_column = LESION_CLASSES[target_class - 1]
    problems: list[str] = []
    pred_path = _existing(cfg, "predictions", problems, "file")
    truth_path = _existing(cfg, "truth", problems, "file")
    root = _out_root(cfg, problems)
    _raise_if(stage, problems)
    try:
        indexes = load_indexes(pred_path)
        truth = load_truth(truth_path)
    except ValueError as e:
        raise StageError(stage, [str(e)])
    for image_id in sorted(truth.keys() - indexes.keys()):
        problems.append(f"predictions: no row for {image_id}")
    for image_id in sorted(indexes.keys() - truth.keys()):
        problems.append(f"truth: no row for predicted {image_id}")
    _raise_if(stage, problems)

    ids = sorted(truth)
    scores = np.array([indexes[i][target_class - 1] for i in ids])
    labels = np.array([truth[i] == target_class for i in ids], dtype=bool)
    try:
        _, auc = roc_auc(scores, labels)
        ap = average_precision(scores, labels)
    except ValueError as e:
        raise StageError(stage, [str(e)])
    report = {
        "task": task,
        "screened_class": score_column,
        "n_images": len(ids),
        "n_positive": int(labels.sum()),
        "auc": auc,
        "ap": ap,
        "ranking": {"metric": "AUC", "value": auc},
    }
    dest = root / "evaluation" / f"{task}.json"
    _write_json(dest, report)
    return _finish(stage, root, [dest])


def cmd_render_overlay(cfg: PipelineConfig) -> dict:
    """Paint mask borders onto their images for visual inspection."""
    stage = "render-overlay"
    problems: list[str] = []
    images_dir = _existing(cfg, "images", problems, "directory")
    masks_dir = _existing(cfg, "masks", problems, "directory")
    root = _out_root(cfg, problems)
    files = _list_images(images_dir) if images_dir and images_dir.is_dir() else []
    if images_dir and images_dir.is_dir() and not files:
        problems.append(f"images: no image files in {images_dir}")
    if masks_dir and masks_dir.is_dir():
        for f in files:
            if not (masks_dir / f"{f.stem}.png").is_file():
                problems.append(f"masks: no mask for {f.stem}")
    _raise_if(stage, problems)

    produced = []
    for f in files:
        img = imaging.load_image(f)
        mask = imaging.load_mask(masks_dir / f"{f.stem}.png")
        if mask.shape != img.shape[:2]:
            problems.append(f"{f.stem}: mask {mask.shape} vs image {img.shape[:2]}")
            continue
        border = ndimage.binary_dilation(
            imaging.border_mask(mask), structure=np.ones((3, 3), dtype=bool)
        )
        overlay = img.copy()
        overlay[border] = (0.0, 1.0, 0.0)
        dest = root / "render" / f"{f.stem}_overlay.png"
        _save_atomic(dest, lambda tmp, o=overlay: imaging.save_image(tmp, o))
        produced.append(dest)
    _raise_if(stage, problems)
    return _finish(stage, root, produced)


def cmd_render_distance(cfg: PipelineConfig) -> dict:
    """False-color distance maps of lesion masks."""
    stage = "render-distance-heatmap"
    problems: list[str] = []
    masks_dir = _existing(cfg, "masks", problems, "directory")
    root = _out_root(cfg, problems)
    files = _list_images(masks_dir) if masks_dir and masks_dir.is_dir() else []
    if masks_dir and masks_dir.is_dir() and not files:
        problems.append(f"masks: no mask files in {masks_dir}")
    _raise_if(stage, problems)

    produced = []
    for f in files:
        mask = imaging.load_mask(f)
        rendered = imaging.heatmap(imaging.distance_map(mask))
        dest = root / "render" / f"{f.stem}_distance.png"
        _save_atomic(dest, lambda tmp, r=rendered: imaging.save_image(tmp, r))
        produced.append(dest)
    return _finish(stage, root, produced)
