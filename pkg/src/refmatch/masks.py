"""Binary and soft segmentation masks.

Binary masks are stored run-length encoded in the COCO uncompressed
convention: pixels are scanned column-major (Fortran order) and the run
counts alternate between zeros and ones, always starting with a zero run
(which may have length 0 when the mask begins with a foreground pixel).

Soft masks are dense per-pixel probability grids in [0, 1]; they carry
model predictions and support a differentiable IoU with an analytic
gradient. Reverse-blur visual prompting keeps the masked region of an
image crisp and Gaussian-blurs everything else.

All values here are immutable once constructed, so they can be shared
freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GeometryError, RefmatchError

PROB_EPS = 1e-7  # probability clamp used by every log-based loss


@dataclass(frozen=True)
class RleMask:
    """Column-major uncompressed RLE mask.

    ``counts`` must sum to ``height * width`` and only the leading run may
    be zero-length; every later run is strictly positive so the encoding
    is canonical (no two adjacent runs of the same value).
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise RefmatchError(
                f"mask dimensions must be positive, got {self.height}x{self.width}"
            )
        if not self.counts:
            raise RefmatchError("RLE counts must be non-empty")
        if any(c < 0 for c in self.counts):
            raise RefmatchError(f"RLE counts must be non-negative, got {self.counts}")
        if any(c == 0 for c in self.counts[1:]):
            raise RefmatchError(
                "only the leading RLE run may be zero-length, "
                f"got {self.counts}"
            )
        total = sum(self.counts)
        if total != self.height * self.width:
            raise RefmatchError(
                f"RLE counts sum to {total}, expected "
                f"{self.height}x{self.width} = {self.height * self.width}"
            )

    @property
    def area(self) -> int:
        """Number of foreground pixels (the odd-indexed runs)."""
        return sum(self.counts[1::2])


@dataclass(frozen=True)
class SoftMask:
    """Dense per-pixel probability grid in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise RefmatchError(f"soft mask must be a non-empty 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RefmatchError("soft mask contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise RefmatchError("soft mask values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ImageBuffer:
    """RGB image with per-channel intensities in [0, 1], shape (H, W, 3)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise RefmatchError(f"image must have shape (H, W, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RefmatchError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise RefmatchError("image intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def rle_decode(mask: RleMask) -> np.ndarray:
    """Expand an RLE mask into a dense uint8 grid of shape (height, width)."""
    total = sum(mask.counts)
    if total != mask.height * mask.width:
        raise RefmatchError(
            f"cannot decode: counts sum to {total}, expected {mask.height * mask.width}"
        )
    values = np.arange(len(mask.counts), dtype=np.uint8) & 1
    flat = np.repeat(values, np.asarray(mask.counts, dtype=np.int64))
    return flat.reshape((mask.height, mask.width), order="F")


def rle_encode(grid: np.ndarray) -> RleMask:
    """Encode a dense binary grid as an RleMask. Exact round trip with rle_decode."""
    arr = np.asarray(grid)
    if arr.ndim != 2 or arr.size == 0:
        raise RefmatchError(f"grid must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
        raise RefmatchError("grid cells must be 0 or 1")
    flat = arr.astype(np.uint8).ravel(order="F")
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    counts = [int(c) for c in lengths]
    if flat[0] == 1:
        counts.insert(0, 0)
    return RleMask(height=arr.shape[0], width=arr.shape[1], counts=tuple(counts))


def _require_same_dims(h1: int, w1: int, h2: int, w2: int, what: str) -> None:
    if (h1, w1) != (h2, w2):
        raise GeometryError(f"{what}: {h1}x{w1} vs {h2}x{w2}")


def iou(a: RleMask, b: RleMask) -> float:
    """Intersection over union of two binary masks. Both empty -> 1.0."""
    _require_same_dims(a.height, a.width, b.height, b.width, "mask dimensions differ")
    ga = rle_decode(a).astype(bool)
    gb = rle_decode(b).astype(bool)
    union = int(np.logical_or(ga, gb).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(ga, gb).sum())
    return inter / union


def soft_iou(pred: SoftMask, target: RleMask) -> float:
    """Differentiable IoU relaxation between a soft prediction and a binary target.

    Intersection is the elementwise product sum, union follows
    inclusion-exclusion: U = sum(pred) + sum(target) - I. Both empty -> 1.0.
    """
    _require_same_dims(pred.height, pred.width, target.height, target.width,
                       "prediction/target dimensions differ")
    t = rle_decode(target).astype(np.float64)
    p = pred.values
    inter = float((p * t).sum())
    union = float(p.sum() + t.sum() - inter)
    if union == 0.0:
        return 1.0
    return inter / union


def soft_iou_grad(pred: SoftMask, target: RleMask) -> np.ndarray:
    """Per-pixel gradient of soft_iou with respect to the prediction.

    d(I/U)/dp = (t*U - I*(1-t)) / U^2, taken pixelwise. Raises when the
    union is zero (IoU pinned at 1.0 by convention, gradient undefined).
    """
    _require_same_dims(pred.height, pred.width, target.height, target.width,
                       "prediction/target dimensions differ")
    t = rle_decode(target).astype(np.float64)
    p = pred.values
    inter = float((p * t).sum())
    union = float(p.sum() + t.sum() - inter)
    if union == 0.0:
        raise RefmatchError("soft IoU gradient undefined: union is zero")
    return (t * union - inter * (1.0 - t)) / (union * union)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel truncated at radius ceil(3*sigma)."""
    if sigma <= 0:
        raise RefmatchError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(image: ImageBuffer, sigma: float) -> ImageBuffer:
    """Separable Gaussian blur with edge-replication padding."""
    kernel = gaussian_kernel(sigma)
    out = ndimage.convolve1d(image.values, kernel, axis=0, mode="nearest")
    out = ndimage.convolve1d(out, kernel, axis=1, mode="nearest")
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def reverse_blur_prompt(image: ImageBuffer, mask: RleMask, sigma: float = 50.0) -> ImageBuffer:
    """Visually prompt an image by blurring everything outside the mask.

    Pixels under the mask are copied bit-identically from the input; the
    rest come from a Gaussian blur of the whole image with the given sigma.
    """
    _require_same_dims(image.height, image.width, mask.height, mask.width,
                       "image/mask dimensions differ")
    blurred = gaussian_blur(image, sigma)
    keep = rle_decode(mask).astype(bool)[:, :, None]
    return ImageBuffer(np.where(keep, image.values, blurred.values))
