"""Synthetic data generators for end-to-end exercises.

Texture patches give the five feature classes distinguishable micro-patterns
on overlapping skin-tone bases; lesion images give three diagnosis classes
distinguishable blob fills on a textured background. Both are fully
deterministic under a seed.
"""

from __future__ import annotations

import numpy as np

from .imaging import distance_map
from .rng import named_rng

PATCH_SIDE = 56
LESION_SIDE = 160
LESION_CLASS_IDS = (1, 2, 3)  # melanoma, seborrheic keratosis, nevus pixel labels

# blob fill tones per lesion class; background skin sits near (0.72, 0.56, 0.46)
_FILL = {
    1: np.array([0.20, 0.12, 0.10]),  # melanoma: very dark brown
    2: np.array([0.58, 0.44, 0.26]),  # sk: light waxy brown
    3: np.array([0.44, 0.28, 0.38]),  # nevus: muted violet-tan
}


def _skin_base(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    r = rng.uniform(0.66, 0.80)
    base = np.array([r, r * rng.uniform(0.72, 0.82), r * rng.uniform(0.58, 0.70)])
    img = np.tile(base, (h, w, 1))
    ramp = np.linspace(-0.03, 0.03, h)[:, None, None] * rng.uniform(-1, 1)
    img = img + ramp + rng.normal(scale=0.015, size=(h, w, 3))
    return img


def make_texture_patch(cls: int, rng: np.random.Generator, side: int = PATCH_SIDE) -> np.ndarray:
    """One (3, side, side) patch of feature class 0..4 (B, PN, NN, MC, S)."""
    if cls not in range(5):
        raise ValueError(f"feature class must be 0..4, got {cls}")
    img = _skin_base(rng, side, side)
    rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    if cls == 1:  # horizontal banding
        period = rng.uniform(6, 10)
        phase = rng.uniform(0, period)
        bands = np.sin(2 * np.pi * (rows + phase) / period) > 0
        img[bands] -= 0.22
    elif cls == 2:  # diagonal banding
        period = rng.uniform(8, 14)
        phase = rng.uniform(0, period)
        bands = np.sin(2 * np.pi * (rows + cols + phase) / period) > 0
        img[bands] -= 0.22
    elif cls == 3:  # bright dot lattice
        spacing = int(rng.integers(8, 13))
        off_r, off_c = rng.integers(0, spacing, size=2)
        dot = ((rows - off_r) % spacing < 3) & ((cols - off_c) % spacing < 3)
        img[dot] += 0.25
    elif cls == 4:  # concentric rings
        cy, cx = rng.uniform(side * 0.3, side * 0.7, size=2)
        period = rng.uniform(7, 11)
        rad = np.sqrt((rows - cy) ** 2 + (cols - cx) ** 2)
        rings = (rad % period) < period / 2
        img[rings] -= 0.20
    return np.clip(img, 0, 1).transpose(2, 0, 1)


def make_patch_dataset(
    per_class: int | dict[int, int], seed: int, stream: str = "synthetic.patches"
) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled (n, 3, 56, 56) patches plus integer labels.

    Distinct `stream` names draw disjoint datasets from the same seed.
    """
    counts = {c: per_class for c in range(5)} if isinstance(per_class, int) else per_class
    rng = named_rng(seed, stream)
    images = []
    labels = []
    for cls in sorted(counts):
        for _ in range(counts[cls]):
            images.append(make_texture_patch(cls, rng))
            labels.append(cls)
    images = np.stack(images)
    labels = np.array(labels)
    order = rng.permutation(labels.size)
    return images[order], labels[order]


def _blob_mask(
    rng: np.random.Generator, side: int, radius_range: tuple[float, float]
) -> np.ndarray:
    radius = rng.uniform(*radius_range)
    margin = min(radius * 1.25 + 4, side / 2 - 1)  # wobble peaks at 1.25x radius
    cy, cx = rng.uniform(margin, side - margin, size=2)
    rows, cols = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    theta = np.arctan2(rows - cy, cols - cx)
    wobble = np.zeros_like(theta)
    for k in range(2, 6):
        wobble += rng.uniform(0, 0.12) / (k - 1) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    r_theta = radius * (1.0 + wobble)
    dist = np.sqrt((rows - cy) ** 2 + (cols - cx) ** 2)
    return dist <= r_theta


def make_lesion_image(
    cls: int,
    rng: np.random.Generator,
    side: int = LESION_SIDE,
    radius_range: tuple[float, float] = (35.0, 60.0),
) -> tuple[np.ndarray, np.ndarray]:
    """One (side, side, 3) dermoscopy-like image and its lesion mask.

    cls is the pixel-label class id: 1 melanoma, 2 keratosis, 3 nevus.
    """
    if cls not in LESION_CLASS_IDS:
        raise ValueError(f"lesion class must be one of {LESION_CLASS_IDS}, got {cls}")
    img = _skin_base(rng, side, side)
    mask = _blob_mask(rng, side, radius_range)
    fill = _FILL[cls] + rng.normal(scale=0.03, size=3)
    img[mask] = fill + rng.normal(scale=0.02, size=(int(mask.sum()), 3))
    if cls == 1:  # dark speckle
        speck = mask & (rng.random((side, side)) < 0.08)
        img[speck] *= 0.4
    elif cls == 2:  # waxy bright flecks
        fleck = mask & (rng.random((side, side)) < 0.06)
        img[fleck] = np.clip(img[fleck] + 0.25, 0, 1)
    return np.clip(img, 0, 1), mask


def corrupt_boundary(
    img: np.ndarray,
    mask: np.ndarray,
    cls: int,
    rng: np.random.Generator,
    width: float = 6.0,
) -> np.ndarray:
    """Blend the outer ring of the lesion toward a different class's fill tone.

    The distortion is strongest at the border and fades toward the interior,
    so per-pixel evidence near the boundary becomes misleading while the
    lesion core stays trustworthy.
    """
    other = {1: 2, 2: 3, 3: 1}[cls]
    dmap = distance_map(mask)
    ring = mask & (dmap <= width)
    alpha = np.zeros(mask.shape)
    alpha[ring] = 0.85 * (1.0 - dmap[ring] / width)
    out = img.copy()
    wrong = _FILL[other] + rng.normal(scale=0.02, size=3)
    out[ring] = (1 - alpha[ring, None]) * out[ring] + alpha[ring, None] * wrong
    return np.clip(out, 0, 1)


def make_lesion_dataset(
    n: int,
    seed: int,
    side: int = LESION_SIDE,
    corrupt_fraction: float = 0.0,
    stream: str = "synthetic.lesions",
) -> list[dict]:
    """n samples cycling through the three classes; each entry carries the
    image, its mask, the class id, and whether its boundary was corrupted.

    Distinct `stream` names draw disjoint datasets from the same seed."""
    rng = named_rng(seed, stream)
    out = []
    for i in range(n):
        cls = LESION_CLASS_IDS[i % 3]
        img, mask = make_lesion_image(cls, rng, side=side)
        corrupted = rng.random() < corrupt_fraction
        if corrupted:
            img = corrupt_boundary(img, mask, cls, rng)
        out.append({"image": img, "mask": mask, "cls": cls, "corrupted": corrupted})
    return out


def pixel_labels(mask: np.ndarray, cls: int) -> np.ndarray:
    """Per-pixel training target: class id inside the lesion, 0 outside."""
    return np.where(mask, cls, 0).astype(np.int64)
