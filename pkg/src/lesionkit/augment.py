"""Deterministic dataset builders for the rotation / mirror / patch-balance
augmentation scheme.

Manifests store transform descriptors, never pixels; the transforms are
replayed through the imaging ops when a batch is actually assembled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imaging
from .rng import named_rng

PATCH_CLASSES = ("B", "PN", "NN", "MC", "S")


@dataclass(frozen=True)
class ManifestRecord:
    item_id: str
    source_path: str
    label: str
    angle_deg: float = 0.0
    flip_axis: str | None = None  # 'x', 'y', or None

    def replay(self, img: np.ndarray) -> np.ndarray:
        """Apply this record's transform chain to a decoded source image."""
        out = img
        if self.angle_deg != 0.0:
            out = imaging.rotate(out, self.angle_deg)
        if self.flip_axis is not None:
            out = imaging.flip(out, self.flip_axis)
        return out


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.item_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest item ids must be unique")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def count_by_label(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.label] = out.get(r.label, 0) + 1
        return out


@dataclass(frozen=True)
class AugmentPlan:
    rotation_step: dict[str, int] = field(default_factory=dict)  # degrees per class
    sample_targets: dict[str, int] = field(default_factory=dict)  # down-sample sizes
    patch_angles: tuple[int, ...] = (0, 90, 180, 270)

    def __post_init__(self):
        for label, step in self.rotation_step.items():
            if step <= 0 or 360 % step != 0:
                raise ValueError(f"rotation step for {label!r} must divide 360, got {step}")
        for label, target in self.sample_targets.items():
            if target < 0:
                raise ValueError(f"sampling target for {label!r} must be >= 0")


def lesion_plan(mel_step: int = 18, sk_step: int = 18, nevus_step: int = 45) -> AugmentPlan:
    """Whole-image rotation steps; rarer classes get denser angle sets."""
    return AugmentPlan(
        rotation_step={"melanoma": mel_step, "seborrheic_keratosis": sk_step, "nevus": nevus_step}
    )


def patch_plan(b_target: int = 87089, pn_target: int = 77325) -> AugmentPlan:
    """Patch balancing: shrink the two giant classes, rotate the small ones."""
    return AugmentPlan(sample_targets={"B": b_target, "PN": pn_target})


def build_dr(src: DatasetManifest, plan: AugmentPlan) -> DatasetManifest:
    """Rotation-expanded set: each image becomes 360/step entries."""
    out: list[ManifestRecord] = []
    for rec in src:
        if rec.label not in plan.rotation_step:
            raise ValueError(f"no rotation step configured for class {rec.label!r}")
        step = plan.rotation_step[rec.label]
        for angle in range(0, 360, step):
            out.append(
                replace(rec, item_id=f"{rec.item_id}_r{angle:03d}", angle_deg=float(angle))
            )
    return DatasetManifest(out)


def build_dm(dr: DatasetManifest, seed: int) -> DatasetManifest:
    """Mirrored copy of DR: every entry gains one seeded random flip."""
    rng = named_rng(seed, "augment.mirror")
    axes = rng.integers(0, 2, size=len(dr))
    out = [
        replace(rec, item_id=f"{rec.item_id}_f", flip_axis="x" if ax == 0 else "y")
        for rec, ax in zip(dr, axes)
    ]
    return DatasetManifest(out)


def balance_patches(src: DatasetManifest, plan: AugmentPlan, seed: int) -> DatasetManifest:
    """Down-sample the configured classes; expand the rest over the angle set."""
    for rec in src:
        if rec.label not in PATCH_CLASSES:
            raise ValueError(f"unknown patch class {rec.label!r}")
    rng = named_rng(seed, "augment.patch_sample")
    out: list[ManifestRecord] = []
    for label in PATCH_CLASSES:
        members = [r for r in src if r.label == label]
        if label in plan.sample_targets:
            target = plan.sample_targets[label]
            if target > len(members):
                raise ValueError(
                    f"cannot sample {target} patches from {len(members)} of class {label!r}"
                )
            keep = rng.choice(len(members), size=target, replace=False)
            out.extend(members[i] for i in sorted(keep))
        else:
            for rec in members:
                for angle in plan.patch_angles:
                    out.append(
                        replace(
                            rec,
                            item_id=f"{rec.item_id}_r{angle:03d}",
                            angle_deg=float(angle),
                        )
                    )
    return DatasetManifest(out)


# ------------------------------------------------------------------ csv io

CSV_FIELDS = ("id", "source_path", "label", "angle_deg", "flip_axis")


def save_manifest(path: str | Path, manifest: DatasetManifest):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_FIELDS)
        for r in manifest:
            writer.writerow(
                [r.item_id, r.source_path, r.label, repr(r.angle_deg), r.flip_axis or ""]
            )


def load_manifest(path: str | Path) -> DatasetManifest:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != list(CSV_FIELDS):
            raise ValueError(f"unexpected manifest header {header}")
        records = [
            ManifestRecord(
                item_id=row[0],
                source_path=row[1],
                label=row[2],
                angle_deg=float(row[3]),
                flip_axis=row[4] or None,
            )
            for row in reader
        ]
    return DatasetManifest(records)
