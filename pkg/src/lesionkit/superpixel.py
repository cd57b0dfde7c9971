"""SLIC superpixel segmentation and uniform 56x56 patch extraction.

The clustering runs in CIELAB so the color distance term matches perceptual
difference; the spatial term is scaled by the grid interval and the
compactness factor. A post-pass guarantees every final region is one
4-connected component.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .augment import PATCH_CLASSES
from .imaging import bilinear_resize, check_image

PATCH_SIDE = 56

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB in [0,1] -> CIELAB under the D65 white point."""
    img = check_image(img)
    linear = np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(img)
    lab[:, :, 0] = 116.0 * f[:, :, 1] - 16.0
    lab[:, :, 1] = 500.0 * (f[:, :, 0] - f[:, :, 1])
    lab[:, :, 2] = 200.0 * (f[:, :, 1] - f[:, :, 2])
    return lab


def _grid_centers(h: int, w: int, k: int) -> np.ndarray:
    interval = np.sqrt(h * w / k)
    ny = max(1, round(h / interval))
    nx = max(1, round(w / interval))
    rows = (np.arange(ny) + 0.5) * h / ny
    cols = (np.arange(nx) + 0.5) * w / nx
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def slic(img: np.ndarray, k: int, m: float = 10.0, max_iters: int = 10) -> np.ndarray:
    """Cluster pixels into about k compact regions; returns an int label map."""
    img = check_image(img)
    h, w, _ = img.shape
    if not 1 <= k <= h * w:
        raise ValueError(f"k must be in [1, {h * w}], got {k}")
    if m <= 0:
        raise ValueError("compactness must be positive")
    lab = rgb_to_lab(img)
    interval = np.sqrt(h * w / k)
    positions = _grid_centers(h, w, k)
    n_centers = positions.shape[0]
    pr = np.clip(positions[:, 0].astype(int), 0, h - 1)
    pc = np.clip(positions[:, 1].astype(int), 0, w - 1)
    colors = lab[pr, pc].astype(np.float64)
    ratio = (m / interval) ** 2

    rows_grid, cols_grid = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(max_iters):
        best = np.full((h, w), np.inf)
        labels.fill(0)
        for ci in range(n_centers):
            cy, cx = positions[ci]
            r0 = max(0, int(np.floor(cy - interval)))
            r1 = min(h, int(np.ceil(cy + interval)) + 1)
            c0 = max(0, int(np.floor(cx - interval)))
            c1 = min(w, int(np.ceil(cx + interval)) + 1)
            window = lab[r0:r1, c0:c1]
            dc2 = ((window - colors[ci]) ** 2).sum(axis=2)
            ds2 = (rows_grid[r0:r1, c0:c1] - cy) ** 2 + (cols_grid[r0:r1, c0:c1] - cx) ** 2
            dist = dc2 + ds2 * ratio
            patch_best = best[r0:r1, c0:c1]
            better = dist < patch_best  # strict: ties keep the earlier center
            patch_best[better] = dist[better]
            labels[r0:r1, c0:c1][better] = ci
        for ci in range(n_centers):
            member = labels == ci
            if member.any():
                positions[ci] = [rows_grid[member].mean(), cols_grid[member].mean()]
                colors[ci] = lab[member].mean(axis=0)
    return _enforce_connectivity(labels)


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each label's largest 4-connected fragment; absorb the rest into
    the most-adjacent surviving neighbor; compact label values."""
    h, w = labels.shape
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    resolved = np.full((h, w), -1, dtype=np.int64)
    for value in np.unique(labels):
        frags, n = ndimage.label(labels == value, structure=four)
        if n == 0:
            continue
        sizes = np.bincount(frags.ravel())[1:]
        best_size = sizes.max()
        keep = 0
        for lab_id in frags.ravel():
            if lab_id and sizes[lab_id - 1] == best_size:
                keep = lab_id
                break
        resolved[frags == keep] = value
    orphan = resolved == -1
    if orphan.any():
        frags, n = ndimage.label(orphan, structure=four)
        for fid in range(1, n + 1):
            member = frags == fid
            # tally resolved labels across the fragment's 4-neighbor edges
            votes: dict[int, int] = {}
            for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                src = member
                rs, cs = shift
                neigh = np.roll(resolved, (rs, cs), axis=(0, 1))
                valid = np.ones_like(member)
                if rs == 1:
                    valid[0, :] = False
                elif rs == -1:
                    valid[-1, :] = False
                if cs == 1:
                    valid[:, 0] = False
                elif cs == -1:
                    valid[:, -1] = False
                touching = src & valid & (neigh != -1)
                for v in neigh[touching]:
                    votes[int(v)] = votes.get(int(v), 0) + 1
            winner = min(votes, key=lambda lab_v: (-votes[lab_v], lab_v))
            resolved[member] = winner
    # compact to 0..n-1 in row-major first-appearance order
    _, first_index = np.unique(resolved.ravel(), return_index=True)
    order = resolved.ravel()[np.sort(first_index)]
    lookup = np.empty(int(resolved.max()) + 1, dtype=np.int64)
    lookup[order] = np.arange(order.size)
    return lookup[resolved]


def region_count(labels: np.ndarray) -> int:
    return int(labels.max()) + 1


# ------------------------------------------------------------------- patches

@dataclass(frozen=True)
class PatchRecord:
    image_id: str
    label: int
    pixels: np.ndarray  # (56, 56, 3)
    feature_class: str

    def __post_init__(self):
        if self.pixels.shape != (PATCH_SIDE, PATCH_SIDE, 3):
            raise ValueError(f"patch must be {PATCH_SIDE}x{PATCH_SIDE}x3, got {self.pixels.shape}")
        if self.feature_class not in PATCH_CLASSES:
            raise ValueError(f"unknown feature class {self.feature_class!r}")


def extract_patches(
    img: np.ndarray,
    labels: np.ndarray,
    annotations: dict[int, str] | None = None,
    image_id: str = "",
) -> list[PatchRecord]:
    """One uniform patch per superpixel: tight bounding box, bilinear to 56x56.

    Pixels inside the box but outside the superpixel are kept as context.
    Labels missing from `annotations` default to background class B.
    """
    img = check_image(img)
    labels = np.asarray(labels)
    if labels.shape != img.shape[:2]:
        raise ValueError(f"label map {labels.shape} does not match image {img.shape[:2]}")
    annotations = annotations or {}
    present = set(int(v) for v in np.unique(labels))
    for lab_v in annotations:
        if int(lab_v) not in present:
            raise ValueError(f"annotation references label {lab_v} absent from the map")
    records = []
    for value in sorted(present):
        member = labels == value
        rows = np.nonzero(member.any(axis=1))[0]
        cols = np.nonzero(member.any(axis=0))[0]
        box = img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
        patch = bilinear_resize(box, PATCH_SIDE, PATCH_SIDE)
        records.append(
            PatchRecord(
                image_id=image_id,
                label=value,
                pixels=patch,
                feature_class=annotations.get(value, "B"),
            )
        )
    return records


# ------------------------------------------------------------------ persistence

def save_label_map(path: str | Path, labels: np.ndarray):
    """Label index encoded across channels as index = R + 256*G."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= 256 * 256:
        raise ValueError("labels must lie in [0, 65535] for RGB index encoding")
    h, w = labels.shape
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    rgb[:, :, 0] = labels % 256
    rgb[:, :, 1] = labels // 256
    PILImage.fromarray(rgb, mode="RGB").save(path, format="PNG")


def load_label_map(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        rgb = np.asarray(im.convert("RGB")).astype(np.int64)
    return rgb[:, :, 0] + 256 * rgb[:, :, 1]


def save_annotations(path: str | Path, rows: list[tuple[str, int, str]]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "superpixel_label", "feature_class"])
        for image_id, label, feature in rows:
            writer.writerow([image_id, label, feature])


def load_annotations(path: str | Path) -> dict[str, dict[int, str]]:
    """CSV -> {image_id: {superpixel_label: feature_class}}."""
    out: dict[str, dict[int, str]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["image_id", "superpixel_label", "feature_class"]:
            raise ValueError(f"unexpected annotation header {header}")
        for image_id, label, feature in reader:
            if feature not in PATCH_CLASSES:
                raise ValueError(f"unknown feature class {feature!r}")
            out.setdefault(image_id, {})[int(label)] = feature
    return out
