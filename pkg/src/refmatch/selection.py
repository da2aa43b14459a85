"""Candidate mask selection from precomputed embeddings or scores.

The zero-shot path picks, per referring expression, the candidate whose
visually-prompted image embedding has the highest cosine similarity with
the expression's text embedding. Random and ground-truth-oracle selectors
provide the usual lower/upper baselines, and a constrained-greedy variant
reuses the matcher machinery with similarity as the score.

All ties break toward the lexicographically smallest identifier so that
every selector is reproducible across runs and platforms.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .data import CandidateSet, EmbeddingTable, ImageRecord
from .errors import RefmatchError
from .masks import RleMask, iou

# (ref_id, candidate_id) -> cosine similarity
SimilarityScores = Mapping[tuple[str, str], float]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u . v / (|u| |v|), defined only for nonzero vectors of equal length."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise RefmatchError(f"vectors must share one dimension, got {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise RefmatchError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def project_class(phrase_embedding: np.ndarray,
                  label_embeddings: Mapping[str, np.ndarray]) -> str:
    """Map a phrase embedding to the most similar label; ties go to the
    lexicographically smallest label."""
    if not label_embeddings:
        raise RefmatchError("cannot project onto an empty label set")
    best_label = None
    best_score = -np.inf
    for label in sorted(label_embeddings):
        score = cosine_similarity(phrase_embedding, label_embeddings[label])
        if score > best_score:
            best_label, best_score = label, score
    assert best_label is not None
    return best_label


def scores_from_embeddings(table: EmbeddingTable, image_id: str,
                           per_reference: Mapping[str, Sequence[str]]) -> dict[tuple[str, str], float]:
    """Derive similarity scores from an embedding table.

    For every (reference, candidate) pair in the per-reference lists,
    score = cosine(text embedding of the reference, prompted-image
    embedding of (image_id, candidate)).
    """
    scores: dict[tuple[str, str], float] = {}
    for ref_id, cand_ids in per_reference.items():
        if ref_id not in table.text:
            raise RefmatchError(f"no text embedding for ref {ref_id!r}")
        text_vec = table.text[ref_id]
        for cand_id in cand_ids:
            key = (image_id, cand_id)
            if key not in table.prompted_image:
                raise RefmatchError(f"no prompted-image embedding for {key!r}")
            scores[(ref_id, cand_id)] = cosine_similarity(text_vec,
                                                          table.prompted_image[key])
    return scores


def _require_nonempty(ref_id: str, cand_ids: Sequence[str]) -> None:
    if not cand_ids:
        raise RefmatchError(f"reference {ref_id!r} has an empty candidate list")


def zero_shot_select(scores: SimilarityScores,
                     per_reference: Mapping[str, Sequence[str]]) -> dict[str, str]:
    """Per reference, pick the candidate with the highest similarity score.

    Every candidate in the per-reference lists must have a score; ties go
    to the smallest candidate_id.
    """
    selection: dict[str, str] = {}
    for ref_id in sorted(per_reference):
        cand_ids = per_reference[ref_id]
        _require_nonempty(ref_id, cand_ids)
        best = None
        best_score = -np.inf
        for cand_id in sorted(cand_ids):
            if (ref_id, cand_id) not in scores:
                raise RefmatchError(f"missing score for ({ref_id!r}, {cand_id!r})")
            score = scores[(ref_id, cand_id)]
            if not np.isfinite(score):
                raise RefmatchError(f"non-finite score for ({ref_id!r}, {cand_id!r})")
            if score > best_score:
                best, best_score = cand_id, score
        selection[ref_id] = best  # type: ignore[assignment]
    return selection


def random_select(per_reference: Mapping[str, Sequence[str]], seed: int) -> dict[str, str]:
    """Uniform random choice per reference, deterministic under the seed.

    References are visited in sorted order; each draws one index from its
    sorted candidate list.
    """
    rng = np.random.default_rng(seed)
    selection: dict[str, str] = {}
    for ref_id in sorted(per_reference):
        cand_ids = sorted(per_reference[ref_id])
        _require_nonempty(ref_id, cand_ids)
        selection[ref_id] = cand_ids[int(rng.integers(len(cand_ids)))]
    return selection


def oracle_select(image: ImageRecord, candidates: CandidateSet,
                  ground_truth: Mapping[str, RleMask]) -> dict[str, str]:
    """Pick, per reference, the candidate with the highest IoU against the
    object's ground-truth mask (test-harness upper bound; ties go to the
    smallest candidate_id)."""
    selection: dict[str, str] = {}
    for object_id, ref in image.references():
        if object_id not in ground_truth:
            raise RefmatchError(f"no ground-truth mask for object {object_id!r}")
        gt = ground_truth[object_id]
        cand_ids = candidates.per_reference.get(ref.ref_id, ())
        _require_nonempty(ref.ref_id, cand_ids)
        best = None
        best_iou = -1.0
        for cand_id in sorted(cand_ids):
            score = iou(candidates.candidate(cand_id).mask, gt)
            if score > best_iou:
                best, best_iou = cand_id, score
        selection[ref.ref_id] = best  # type: ignore[assignment]
    return selection


def greedy_select_by_similarity(scores: SimilarityScores, image: ImageRecord,
                                candidates: CandidateSet) -> dict[str, str]:
    """Constrained greedy selection with similarity standing in for the
    matching score.

    Runs the same exclusion-set scan as the matcher, so references of one
    object share a candidate and no candidate serves two objects. Objects
    left over when candidates run out have no entry in the result.
    """
    from .matching import greedy_match

    triple_scores: dict[tuple[str, str, str], float] = {}
    for object_id, ref in image.references():
        cand_ids = candidates.per_reference.get(ref.ref_id, ())
        _require_nonempty(ref.ref_id, cand_ids)
        for cand_id in cand_ids:
            if (ref.ref_id, cand_id) not in scores:
                raise RefmatchError(f"missing score for ({ref.ref_id!r}, {cand_id!r})")
            triple_scores[(object_id, ref.ref_id, cand_id)] = scores[(ref.ref_id, cand_id)]
    assignment = greedy_match(triple_scores)
    selection: dict[str, str] = {}
    for object_id, ref in image.references():
        cand_id = assignment.matched.get(object_id)
        if cand_id is not None:
            selection[ref.ref_id] = cand_id
    return selection
