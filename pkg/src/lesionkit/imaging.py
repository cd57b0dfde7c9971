"""Image primitives: io, crop/resize preprocessing, geometric transforms,
border extraction, and the exact euclidean distance map used for
distance-weighted refinement.

Images are float64 (h, w, 3) arrays with channel values in [0, 1]; masks are
bool (h, w) arrays where True marks lesion.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .nn.layers import resample_matrix

GRID_MAGIC = b"LKGRID\x00\x01"


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (h, w, 3), got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return img


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise ValueError(f"mask must be boolean, got dtype {mask.dtype}")
    if mask.ndim != 2:
        raise ValueError(f"mask must be (h, w), got shape {mask.shape}")
    return mask


# ---------------------------------------------------------------- file io

def load_image(path: str | Path) -> np.ndarray:
    """Decode an 8-bit RGB PNG or JPEG into a [0, 1] float array."""
    with PILImage.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return arr


def save_image(path: str | Path, img: np.ndarray):
    """Encode as 8-bit RGB PNG (round-to-nearest quantization)."""
    img = check_image(img)
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(quantized, mode="RGB").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Single-channel PNG, 0/255 semantics; anything >= 128 counts as lesion."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def save_mask(path: str | Path, mask: np.ndarray):
    mask = check_mask(mask)
    PILImage.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def save_float_grid(path: str | Path, grid: np.ndarray):
    """Raw little-endian float64 grid with a fixed 16-byte header."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"grid must be 2-d, got shape {grid.shape}")
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<II", grid.shape[0], grid.shape[1]))
        f.write(grid.astype("<f8").tobytes())


def load_float_grid(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise ValueError("bad float-grid magic")
    h, w = struct.unpack("<II", raw[len(GRID_MAGIC) : len(GRID_MAGIC) + 8])
    body = raw[len(GRID_MAGIC) + 8 :]
    if len(body) != h * w * 8:
        raise ValueError("float grid truncated")
    return np.frombuffer(body, dtype="<f8").reshape(h, w).copy()


# ----------------------------------------------------- resize and transforms

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling, channel by channel."""
    img = check_image(img)
    h, w, _ = img.shape
    rh = resample_matrix(h, out_h)
    rw = resample_matrix(w, out_w)
    out = np.empty((out_h, out_w, 3))
    for ch in range(3):
        out[:, :, ch] = rh @ img[:, :, ch] @ rw.T
    return np.clip(out, 0.0, 1.0)


def center_crop_resize(img: np.ndarray, out_side: int) -> np.ndarray:
    """Largest centered square crop, then bilinear resize to out_side**2."""
    img = check_image(img)
    if out_side < 1:
        raise ValueError("out_side must be >= 1")
    h, w, _ = img.shape
    if h < 2 or w < 2:
        raise ValueError("degenerate image: both sides must be >= 2")
    side = min(h, w)
    r0 = (h - side) // 2
    c0 = (w - side) // 2
    crop = img[r0 : r0 + side, c0 : c0 + side]
    if side == out_side:
        return crop.copy()
    return bilinear_resize(crop, out_side, out_side)


def resize_proportional(img: np.ndarray, target_long_side: int) -> np.ndarray:
    """Scale so the longer side hits the target; shorter side rounds to keep aspect."""
    img = check_image(img)
    if target_long_side < 1:
        raise ValueError("target_long_side must be >= 1")
    h, w, _ = img.shape
    long_side = max(h, w)
    scale = target_long_side / long_side
    out_h = target_long_side if h == long_side else max(1, int(h * scale + 0.5))
    out_w = target_long_side if w == long_side else max(1, int(w * scale + 0.5))
    if (out_h, out_w) == (h, w):
        return img.copy()
    return bilinear_resize(img, out_h, out_w)


def rotate(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate counterclockwise about the image center, same output size.

    Multiples of 90 degrees are exact pixel permutations; everything else is
    bilinear with reflection padding for samples that fall outside the frame.
    """
    img = check_image(img)
    if angle_deg % 90 == 0:
        k = int(angle_deg // 90) % 4
        return np.rot90(img, k=k, axes=(0, 1)).copy()
    h, w, _ = img.shape
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr = rows - cy
    dc = cols - cx
    # inverse map chosen so that 90 degrees reproduces the rot90 permutation
    src_r = cy + cos * dr + sin * dc
    src_c = cx - sin * dr + cos * dc
    out = np.empty_like(img)
    for ch in range(3):
        out[:, :, ch] = ndimage.map_coordinates(
            img[:, :, ch], [src_r, src_c], order=1, mode="reflect"
        )
    return np.clip(out, 0.0, 1.0)


def flip(img: np.ndarray, axis: str) -> np.ndarray:
    """Mirror along the x-axis (reverse columns) or y-axis (reverse rows)."""
    img = check_image(img)
    if axis == "x":
        return img[:, ::-1].copy()
    if axis == "y":
        return img[::-1].copy()
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


# ------------------------------------------------- borders and distance maps

def border_mask(mask: np.ndarray) -> np.ndarray:
    """Lesion pixels with at least one background 4-neighbour.

    The frame outside the image counts as background, so a lesion touching
    the edge is border there.
    """
    mask = check_mask(mask)
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def extract_border(mask: np.ndarray) -> set:
    """Border pixel coordinates as a set of (row, col) tuples."""
    rr, cc = np.nonzero(border_mask(mask))
    return {(int(r), int(c)) for r, c in zip(rr, cc)}


def distance_map(mask: np.ndarray) -> np.ndarray:
    """Exact euclidean distance from each lesion pixel to the nearest border
    pixel. Border pixels and background are 0."""
    mask = check_mask(mask)
    border = border_mask(mask)
    if not border.any():
        return np.zeros(mask.shape)
    dist = ndimage.distance_transform_edt(~border)
    dist[~mask] = 0.0
    return dist


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected component, holes filled.

    Size ties go to the component whose first pixel comes earliest in
    row-major order.
    """
    mask = check_mask(mask)
    if not mask.any():
        return mask.copy()
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labels.ravel())[1:]
    best_size = sizes.max()
    flat = labels.ravel()
    winner = 0
    for lab in flat:
        if lab and sizes[lab - 1] == best_size:
            winner = lab
            break
    return ndimage.binary_fill_holes(labels == winner)


# ------------------------------------------------------------ visualization

def heatmap(grid: np.ndarray) -> np.ndarray:
    """False-color rendering of a non-negative grid (max normalized to 1)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"grid must be 2-d, got shape {grid.shape}")
    if grid.min() < 0:
        raise ValueError("grid values must be non-negative")
    peak = grid.max()
    v = grid / peak if peak > 0 else grid
    out = np.empty((*grid.shape, 3))
    out[:, :, 0] = np.clip(1.5 - np.abs(4 * v - 3), 0, 1)
    out[:, :, 1] = np.clip(1.5 - np.abs(4 * v - 2), 0, 1)
    out[:, :, 2] = np.clip(1.5 - np.abs(4 * v - 1), 0, 1)
    return out
