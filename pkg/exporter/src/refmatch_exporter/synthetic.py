"""Synthetic scene generator for fixtures and smoke tests.

Draws colored squares / rectangles / ellipses on a flat gray backdrop and
writes the matching dataset.jsonl, images, and per-reference ground-truth
masks, so the whole export pipeline can be exercised hermetically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import encode_rle, save_image

COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.1),
}
SHAPES = ("square", "rectangle", "ellipse")
BACKGROUND = 0.8


@dataclass(frozen=True)
class DrawnObject:
    object_id: str
    shape: str
    color: str
    mask: np.ndarray  # (H, W) uint8


def _draw(canvas: np.ndarray, shape: str, color: tuple, top: int, left: int,
          h: int, w: int) -> np.ndarray:
    mask = np.zeros(canvas.shape[:2], dtype=np.uint8)
    if shape == "ellipse":
        yy, xx = np.mgrid[0:canvas.shape[0], 0:canvas.shape[1]]
        cy, cx = top + h / 2 - 0.5, left + w / 2 - 0.5
        inside = ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
        mask[inside] = 1
    else:
        mask[top:top + h, left:left + w] = 1
    canvas[mask.astype(bool)] = color
    return mask


def make_scene(rng: np.random.Generator, size: int = 64,
               n_objects: int = 2) -> tuple[np.ndarray, list[DrawnObject]]:
    """One image with n_objects non-overlapping shapes of distinct colors."""
    canvas = np.full((size, size, 3), BACKGROUND)
    cell = size // 2
    slots = rng.permutation(4)[:n_objects]
    colors = rng.permutation(list(COLORS))[:n_objects]
    objects = []
    for j, (slot, color) in enumerate(zip(slots, colors)):
        top0, left0 = (int(slot) // 2) * cell, (int(slot) % 2) * cell
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        if shape == "square":
            h = w = int(rng.integers(12, 20))
        elif shape == "rectangle":
            h = int(rng.integers(8, 13))
            w = int(rng.integers(20, 27))  # aspect >= 1.5, clear of the square band
        else:
            h = int(rng.integers(12, 18))
            w = int(rng.integers(14, 24))
        top = top0 + 3 + int(rng.integers(0, max(1, cell - h - 6)))
        left = left0 + 3 + int(rng.integers(0, max(1, cell - w - 6)))
        mask = _draw(canvas, shape, COLORS[color], top, left, h, w)
        objects.append(DrawnObject(object_id=f"obj{j}", shape=shape,
                                   color=color, mask=mask))
    return canvas, objects


_TEMPLATES = (
    "the {color} {shape}",
    "{color} {shape} in the picture",
    "the {shape} that is {color}",
)


def write_fixture(out_dir: str | Path, n_images: int = 10, size: int = 64,
                  seed: int = 0) -> dict:
    """Generate images + dataset.jsonl + groundtruth.jsonl under out_dir.

    Returns a summary dict with the written paths.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    dataset_lines = [json.dumps({"schema": "dataset", "version": 1})]
    gt_lines = [json.dumps({"schema": "groundtruth", "version": 1})]
    for i in range(n_images):
        image_id = f"img{i:03d}"
        scene, objects = make_scene(rng, size=size, n_objects=int(rng.integers(1, 3)))
        save_image(scene, image_dir / f"{image_id}.png")
        object_records = []
        for obj in objects:
            refs = []
            for k in range(2):
                template = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
                text = template.format(color=obj.color, shape=obj.shape)
                ref_id = f"{image_id}-{obj.object_id}-r{k}"
                refs.append({"ref_id": ref_id, "text": text})
                gt_lines.append(json.dumps(
                    {"ref_id": ref_id, "mask": encode_rle(obj.mask)}))
            object_records.append({"object_id": obj.object_id, "references": refs})
        dataset_lines.append(json.dumps({
            "image_id": image_id,
            "image_path": f"images/{image_id}.png",
            "objects": object_records,
        }))
    dataset_path = out_dir / "dataset.jsonl"
    dataset_path.write_text("\n".join(dataset_lines) + "\n")
    gt_path = out_dir / "groundtruth.jsonl"
    gt_path.write_text("\n".join(gt_lines) + "\n")
    return {"dataset": str(dataset_path), "groundtruth": str(gt_path),
            "images": str(image_dir), "n_images": n_images}
