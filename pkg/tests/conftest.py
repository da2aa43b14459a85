import numpy as np
import pytest

from refmatch import (Candidate, CandidateSet, ImageRecord, ObjectRecord, Reference,
                      ReferringDataset, rle_encode)


def rect_mask(grid, top, left, height, width):
    arr = np.zeros((grid, grid), dtype=np.uint8)
    arr[top:top + height, left:left + width] = 1
    return rle_encode(arr)


def tiny_dataset():
    """One image, two objects, two references each."""
    return ReferringDataset(images=(
        ImageRecord(
            image_id="img0",
            objects=(
                ObjectRecord("obj0", (Reference("r0", "left box"),
                                      Reference("r1", "box on the left"))),
                ObjectRecord("obj1", (Reference("r2", "right box"),
                                      Reference("r3", "box on the right"))),
            ),
        ),
    ))


def tiny_candidates(grid=8):
    mask_a = rect_mask(grid, 1, 1, 4, 2)
    mask_b = rect_mask(grid, 1, 5, 4, 2)
    return CandidateSet(
        image_id="img0",
        candidates=(
            Candidate("a", "box", mask_a),
            Candidate("b", "box", mask_b),
        ),
        per_reference={r: ("a", "b") for r in ("r0", "r1", "r2", "r3")},
    )


@pytest.fixture
def dataset():
    return tiny_dataset()


@pytest.fixture
def candidates():
    return tiny_candidates()
