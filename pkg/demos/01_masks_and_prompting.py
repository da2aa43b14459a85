"""Masks 101: run-length coding, IoU arithmetic, and reverse-blur prompting.

Builds a toy image with two colored boxes, encodes their masks, compares
IoU flavors, and writes a visually prompted PNG next to this script.
"""

from pathlib import Path

import numpy as np

from refmatch import (ImageBuffer, SoftMask, iou, reverse_blur_prompt, rle_decode,
                      rle_encode, soft_iou, soft_iou_grad)
from refmatch.data import save_image

HERE = Path(__file__).parent

# --- a tiny scene: red box on the left, blue box on the right ------------
h = w = 64
image = np.full((h, w, 3), 0.85)
image[12:40, 6:26] = (0.8, 0.15, 0.15)
image[20:52, 38:58] = (0.15, 0.25, 0.8)
scene = ImageBuffer(image)

red_grid = np.zeros((h, w), dtype=int)
red_grid[12:40, 6:26] = 1
red_mask = rle_encode(red_grid)
print(f"red box mask: {red_mask.area} px as {len(red_mask.counts)} RLE runs")
assert np.array_equal(rle_decode(red_mask), red_grid)  # exact round trip

blue_grid = np.zeros((h, w), dtype=int)
blue_grid[20:52, 38:58] = 1
blue_mask = rle_encode(blue_grid)

# --- IoU: binary and soft -------------------------------------------------
print(f"IoU(red, red)  = {iou(red_mask, red_mask):.3f}")
print(f"IoU(red, blue) = {iou(red_mask, blue_mask):.3f}")

noisy = np.clip(red_grid + np.random.default_rng(0).normal(0, 0.15, (h, w)), 0, 1)
pred = SoftMask(noisy)
print(f"soft IoU(noisy red prediction, red) = {soft_iou(pred, red_mask):.3f}")
grad = soft_iou_grad(pred, red_mask)
print(f"gradient pushes inside-mask pixels up ({grad[red_grid == 1].mean():+.4f}) "
      f"and background down ({grad[red_grid == 0].mean():+.4f})")

# --- visual prompting: keep the red box crisp, blur the rest --------------
prompted = reverse_blur_prompt(scene, red_mask, sigma=6.0)
out = HERE / "prompted_scene.png"
save_image(prompted, out)
print(f"wrote reverse-blur prompt to {out}")
inside = rle_decode(red_mask).astype(bool)
assert np.array_equal(prompted.values[inside], scene.values[inside])
print("in-mask pixels are bit-identical to the input, everything else is blurred")
