"""Mask and image conventions shared with the downstream toolkit.

The exporter is standalone — it talks to the consumer only through JSONL
files — so the two conventions that must agree are re-stated here:
column-major uncompressed RLE starting with a zero run, and separable
Gaussian blur with kernel radius ceil(3*sigma), renormalized after
truncation, edge-replication padding. Both sides agree bit-approximately
(the blur) or exactly (the RLE).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage


def encode_rle(grid: np.ndarray) -> dict:
    """Binary (H, W) grid -> {"size": [H, W], "counts": [...]}."""
    arr = np.asarray(grid)
    flat = (arr != 0).astype(np.uint8).ravel(order="F")
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    counts = [int(c) for c in lengths]
    if flat[0] == 1:
        counts.insert(0, 0)
    return {"size": [int(arr.shape[0]), int(arr.shape[1])], "counts": counts}


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable blur of an (H, W, C) float image, replicate padding."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = ndimage.convolve1d(image, kernel, axis=0, mode="nearest")
    out = ndimage.convolve1d(out, kernel, axis=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def reverse_blur(image: np.ndarray, mask: np.ndarray, sigma: float = 50.0) -> np.ndarray:
    """Keep in-mask pixels crisp, blur everything else."""
    blurred = gaussian_blur(image, sigma)
    keep = np.asarray(mask, dtype=bool)[:, :, None]
    return np.where(keep, image, blurred)


def load_image(path: str | Path) -> np.ndarray:
    """8-bit PNG/PPM -> (H, W, 3) float64 in [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
