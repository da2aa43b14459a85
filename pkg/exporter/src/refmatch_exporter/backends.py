"""Model backends behind the export pipeline.

Two pluggable pieces: a detector/segmenter pair that turns (image, class
label) into instance masks, and an embedder that maps texts and images
into one fixed-dimension vector space.

The default "synthetic" backends are deterministic and fully local so the
export path runs anywhere: the detector finds connected non-background
components and classifies them by shape geometry, the segmenter
re-extracts the component inside a detector box (mirroring the
detect-then-segment split of real open-vocabulary pipelines), and the
embedder hashes character n-grams / pools color statistics. A CLIP-backed
embedder is provided as an optional hook for environments where weights
are available.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class BackendUnavailable(RuntimeError):
    """Raised when a requested model backend cannot be loaded."""


Box = tuple[int, int, int, int]  # top, left, height, width


@dataclass(frozen=True)
class Detection:
    label: str
    box: Box


# ---------------------------------------------------------------------------
# synthetic detector / segmenter

def _background_color(image: np.ndarray) -> np.ndarray:
    """Most frequent quantized color; synthetic scenes have a flat backdrop."""
    q = np.rint(image * 255).astype(np.uint8).reshape(-1, 3)
    colors, counts = np.unique(q, axis=0, return_counts=True)
    return colors[np.argmax(counts)].astype(np.float64) / 255.0


def _foreground(image: np.ndarray, tol: float = 0.08) -> np.ndarray:
    bg = _background_color(image)
    return (np.abs(image - bg).max(axis=2) > tol)


def _classify(component: np.ndarray, box: Box) -> str:
    _top, _left, h, w = box
    fill = component.sum() / (h * w)
    aspect = w / h
    if fill >= 0.92:
        return "square" if 0.75 <= aspect <= 1.33 else "rectangle"
    if fill >= 0.55:
        return "ellipse"
    return "blob"


class SyntheticDetector:
    """Connected-component 'open-vocabulary' detector for synthetic scenes.

    Returns boxes of foreground components whose shape class equals the
    queried label, in top-left scan order.
    """

    min_area = 9

    def detect(self, image: np.ndarray, label: str) -> list[Detection]:
        labeled, n = ndimage.label(_foreground(image))
        detections = []
        for idx in range(1, n + 1):
            component = labeled == idx
            if component.sum() < self.min_area:
                continue
            ys, xs = np.nonzero(component)
            box = (int(ys.min()), int(xs.min()),
                   int(ys.max() - ys.min() + 1), int(xs.max() - xs.min() + 1))
            cls = _classify(component, box)
            if cls == label:
                detections.append(Detection(label=cls, box=box))
        detections.sort(key=lambda d: d.box)
        return detections


class SyntheticSegmenter:
    """Class-agnostic segmenter queried on a detector box crop.

    The backdrop color comes from the full image: a tight crop may contain
    nothing but the object itself.
    """

    def segment(self, image: np.ndarray, box: Box) -> np.ndarray:
        top, left, h, w = box
        bg = _background_color(image)
        crop = image[top:top + h, left:left + w]
        fg = np.abs(crop - bg).max(axis=2) > 0.08
        labeled, n = ndimage.label(fg)
        if n == 0:
            return np.zeros(image.shape[:2], dtype=np.uint8)
        sizes = ndimage.sum_labels(np.ones_like(labeled), labeled, range(1, n + 1))
        component = labeled == (1 + int(np.argmax(sizes)))
        mask = np.zeros(image.shape[:2], dtype=np.uint8)
        mask[top:top + h, left:left + w] = component.astype(np.uint8)
        return mask


# ---------------------------------------------------------------------------
# embedders

class HashEmbedder:
    """Deterministic 64-d embedder: hashed character trigrams for text,
    pooled color statistics for images. No model weights involved; identical
    inputs give identical vectors on every platform."""

    dim = 64

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f"  {text.lower()} "
        for i in range(len(padded) - 2):
            gram = padded[i:i + 3]
            digest = hashlib.sha1(gram.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec + 1.0 / np.sqrt(self.dim)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        h, w, _ = image.shape
        cells = []
        for gy in range(4):
            for gx in range(4):
                patch = image[gy * h // 4:(gy + 1) * h // 4,
                              gx * w // 4:(gx + 1) * w // 4]
                cells.append(patch.mean(axis=(0, 1)) if patch.size else np.zeros(3))
        spatial = np.concatenate(cells)  # 48 dims
        gray = image.mean(axis=2)
        hist, _ = np.histogram(gray, bins=16, range=(0.0, 1.0))
        hist = hist.astype(np.float64) / max(1, gray.size)
        vec = np.concatenate([spatial, hist])
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class ClipEmbedder:
    """Optional hook backed by a CLIP checkpoint via transformers.

    Only usable where the weights are present locally; construction fails
    with BackendUnavailable otherwise.
    """

    def __init__(self, model_id: str = "openai/clip-vit-base-patch32",
                 device: str = "cpu"):
        try:
            from transformers import CLIPModel, CLIPProcessor

            self._model = CLIPModel.from_pretrained(model_id).to(device)
            self._processor = CLIPProcessor.from_pretrained(model_id)
            self._device = device
            self.dim = int(self._model.config.projection_dim)
        except Exception as exc:
            raise BackendUnavailable(
                f"CLIP backend unavailable ({model_id}): {exc}"
            ) from exc

    def embed_text(self, text: str) -> np.ndarray:
        import torch

        inputs = self._processor(text=[text], return_tensors="pt",
                                 padding=True).to(self._device)
        with torch.no_grad():
            features = self._model.get_text_features(**inputs)
        return features[0].cpu().numpy().astype(np.float64)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        import torch
        from PIL import Image

        pil = Image.fromarray(np.rint(image * 255).astype(np.uint8))
        inputs = self._processor(images=pil, return_tensors="pt").to(self._device)
        with torch.no_grad():
            features = self._model.get_image_features(**inputs)
        return features[0].cpu().numpy().astype(np.float64)


def make_embedder(name: str):
    if name == "synthetic":
        return HashEmbedder()
    if name.startswith("clip"):
        _, _, model_id = name.partition(":")
        return ClipEmbedder(model_id) if model_id else ClipEmbedder()
    raise BackendUnavailable(f"unknown embedder backend {name!r}")


def make_detector(name: str):
    if name == "synthetic":
        return SyntheticDetector(), SyntheticSegmenter()
    raise BackendUnavailable(f"unknown detector backend {name!r}")
