"""Distance-weighted lesion index calculation.

Coarse per-pixel class scores are normalized per pixel, weighted by the
distance-to-border map (pixels deep inside the lesion count more than pixels
near the unreliable boundary), then averaged over the lesion area to give one
three-way probability vector per image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import check_mask

LESION_CLASSES = ("melanoma", "seborrheic_keratosis", "nevus")


class EmptyMaskError(ValueError):
    """Raised when no lesion pixel is available to average over."""


@dataclass(frozen=True)
class LesionIndex:
    melanoma: float
    seborrheic_keratosis: float
    nevus: float

    def __post_init__(self):
        vals = self.as_array()
        if np.any(vals < 0) or abs(vals.sum() - 1.0) > 1e-9:
            raise ValueError(f"index must be a probability vector, got {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.melanoma, self.seborrheic_keratosis, self.nevus])

    @property
    def predicted_class(self) -> str:
        return LESION_CLASSES[int(np.argmax(self.as_array()))]


def _check_maps(maps: np.ndarray) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[2] != 3:
        raise ValueError(f"maps must be (h, w, 3), got shape {maps.shape}")
    if not np.all(np.isfinite(maps)):
        raise ValueError("non-finite map values")
    return maps


def normalize_possibilities(maps: np.ndarray) -> np.ndarray:
    """Per-pixel min-shifted normalization of the three class channels.

    p_i = (v_i - min_j v_j) / sum_k (v_k - min_j v_j); a pixel whose three
    values are all equal gets the uniform vector.
    """
    maps = _check_maps(maps)
    shifted = maps - maps.min(axis=2, keepdims=True)
    total = shifted.sum(axis=2, keepdims=True)
    degenerate = total[:, :, 0] == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        p = shifted / total
    p[degenerate] = 1.0 / 3.0
    return p


def refine(p: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Weight each normalized channel by the per-pixel distance value."""
    p = _check_maps(p)
    d = np.asarray(d, dtype=np.float64)
    if d.shape != p.shape[:2]:
        raise ValueError(f"distance map {d.shape} does not match maps {p.shape[:2]}")
    return p * d[:, :, None]


def lesion_index(refined: np.ndarray, mask: np.ndarray) -> LesionIndex:
    """Average the refined channels over the lesion area and renormalize."""
    refined = _check_maps(refined)
    mask = check_mask(mask)
    if mask.shape != refined.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match maps {refined.shape[:2]}")
    if not mask.any():
        raise EmptyMaskError("no lesion found")
    raw = refined[mask].mean(axis=0)
    total = raw.sum()
    if total == 0:
        return LesionIndex(1 / 3, 1 / 3, 1 / 3)
    norm = raw / total
    return LesionIndex(float(norm[0]), float(norm[1]), float(norm[2]))


def compute_index(coarse: np.ndarray, distance: np.ndarray, mask: np.ndarray) -> LesionIndex:
    """Full chain: normalize, distance-weight, average over the mask."""
    return lesion_index(refine(normalize_possibilities(coarse), distance), mask)
