"""Constrained greedy matching of candidate masks to objects, and the
losses trained against the matched masks.

Within one image, every object carries several referring expressions and
every expression a list of candidate masks. A feasible assignment gives
each matched object exactly one candidate, gives all expressions of an
object the same candidate, and never reuses a candidate across objects.
The greedy matcher scans (object, reference, candidate) score triples in
descending order, accepting a triple whenever neither its object nor its
candidate has been used, then excluding both. Objects still unmatched when
the scan exhausts the triples are reported explicitly; they simply drop
out of the losses.

Matching is per-image and deterministic: score ties break on
(object_id, ref_id, candidate_id) ascending, so the result is independent
of input record order. Images are independent, so callers may parallelize
across them freely.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import CandidateSet, ImageRecord
from .errors import RefmatchError
from .masks import PROB_EPS, RleMask, SoftMask, rle_decode, rle_encode, soft_iou

# (object_id, ref_id, candidate_id) -> score
MatchScores = Mapping[tuple[str, str, str], float]

BRUTE_FORCE_MAX_OBJECTS = 6
BRUTE_FORCE_MAX_CANDIDATES = 8


@dataclass(frozen=True)
class Assignment:
    """Per-image matching: object_id -> candidate_id plus leftover objects."""

    matched: Mapping[str, str]
    unmatched: tuple[str, ...] = ()

    def candidate_of(self, object_id: str) -> str | None:
        return self.matched.get(object_id)


@dataclass(frozen=True)
class MatchUniverse:
    """Who owns which references, and which candidates each may use."""

    refs_by_object: Mapping[str, tuple[str, ...]]
    candidates_by_ref: Mapping[str, tuple[str, ...]]

    @classmethod
    def from_image(cls, image: ImageRecord, candidates: CandidateSet) -> "MatchUniverse":
        refs_by_object: dict[str, tuple[str, ...]] = {}
        candidates_by_ref: dict[str, tuple[str, ...]] = {}
        for obj in image.objects:
            refs_by_object[obj.object_id] = tuple(r.ref_id for r in obj.references)
            for ref in obj.references:
                candidates_by_ref[ref.ref_id] = tuple(
                    candidates.per_reference.get(ref.ref_id, ())
                )
        return cls(refs_by_object=refs_by_object, candidates_by_ref=candidates_by_ref)


@dataclass(frozen=True)
class Violation:
    """One broken matching constraint.

    rule 1: a matched object's reference has no (or an out-of-list) candidate.
    rule 2: references of one object disagree on the candidate.
    rule 3: one candidate is assigned to several objects.
    """

    rule: int
    message: str


def _validate_scores(scores: MatchScores) -> None:
    for key, value in scores.items():
        if not np.isfinite(value):
            raise RefmatchError(f"non-finite match score for {key!r}")


def compute_match_scores(predictions: Mapping[str, SoftMask], image: ImageRecord,
                         candidates: CandidateSet) -> dict[tuple[str, str, str], float]:
    """Soft-IoU of every prediction against every candidate in its list."""
    scores: dict[tuple[str, str, str], float] = {}
    for object_id, ref in image.references():
        if ref.ref_id not in predictions:
            raise RefmatchError(f"missing prediction for ref {ref.ref_id!r}")
        pred = predictions[ref.ref_id]
        for cand_id in candidates.per_reference.get(ref.ref_id, ()):
            mask = candidates.candidate(cand_id).mask
            scores[(object_id, ref.ref_id, cand_id)] = soft_iou(pred, mask)
    return scores


def greedy_match(scores: MatchScores) -> Assignment:
    """Descending-score greedy scan with an exclusion set.

    Accepting a triple (object, ref, candidate) matches the candidate to
    the object for all of its references and excludes both the object and
    the candidate from the rest of the scan. Ties break on score
    descending, then object_id, ref_id, candidate_id ascending.
    """
    _validate_scores(scores)
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    matched: dict[str, str] = {}
    used_candidates: set[str] = set()
    for (object_id, _ref_id, candidate_id), _score in ordered:
        if object_id in matched or candidate_id in used_candidates:
            continue
        matched[object_id] = candidate_id
        used_candidates.add(candidate_id)
    all_objects = {object_id for (object_id, _, _) in scores}
    unmatched = tuple(sorted(all_objects - matched.keys()))
    return Assignment(matched=matched, unmatched=unmatched)


def assignment_objective(scores: MatchScores, assignment: Assignment) -> float:
    """Total matched score: sum over every (object, ref, assigned candidate)
    triple present in the score table."""
    total = 0.0
    for (object_id, _ref_id, candidate_id), value in scores.items():
        if assignment.matched.get(object_id) == candidate_id:
            total += value
    return total


def brute_force_match(scores: MatchScores) -> tuple[Assignment, float]:
    """Exhaustive optimum over feasible assignments; the optimality
    reference for the greedy matcher at small sizes.

    Enumerates every injective object -> candidate map that cannot be
    extended (an object stays unmatched only when every candidate it could
    use is taken) and returns one maximizing the summed matched score.
    Objective ties break on the lexicographically smallest assignment
    vector, matched candidates before unmatched.
    """
    _validate_scores(scores)
    objects = sorted({j for (j, _, _) in scores})
    candidates = sorted({c for (_, _, c) in scores})
    if len(objects) > BRUTE_FORCE_MAX_OBJECTS or len(candidates) > BRUTE_FORCE_MAX_CANDIDATES:
        raise RefmatchError(
            f"instance too large for enumeration: {len(objects)} objects x "
            f"{len(candidates)} candidates (guard: {BRUTE_FORCE_MAX_OBJECTS} x "
            f"{BRUTE_FORCE_MAX_CANDIDATES})"
        )
    domain: dict[str, list[str]] = {j: [] for j in objects}
    per_object_scores: dict[tuple[str, str], float] = {}
    for (j, _k, c), value in scores.items():
        per_object_scores[(j, c)] = per_object_scores.get((j, c), 0.0) + value
    for (j, c) in per_object_scores:
        domain[j].append(c)
    for j in domain:
        domain[j].sort()

    best: tuple[float, tuple, dict[str, str]] | None = None

    def sort_key(matched: dict[str, str]) -> tuple:
        return tuple((0, matched[j]) if j in matched else (1,) for j in objects)

    def recurse(idx: int, matched: dict[str, str], used: set[str], total: float) -> None:
        nonlocal best
        if idx == len(objects):
            for j in objects:
                if j not in matched and any(c not in used for c in domain[j]):
                    return  # extendable, hence not a "forced unmatched" leaf
            key = sort_key(matched)
            if best is None or total > best[0] or (total == best[0] and key < best[1]):
                best = (total, key, dict(matched))
            return
        j = objects[idx]
        for c in domain[j]:
            if c in used:
                continue
            matched[j] = c
            used.add(c)
            recurse(idx + 1, matched, used, total + per_object_scores[(j, c)])
            used.remove(c)
            del matched[j]
        recurse(idx + 1, matched, used, total)

    recurse(0, {}, set(), 0.0)
    assert best is not None
    total, _key, matched = best
    unmatched = tuple(sorted(set(objects) - matched.keys()))
    return Assignment(matched=matched, unmatched=unmatched), total


def check_feasible(assignment: Assignment | Mapping[str, str],
                   universe: MatchUniverse) -> list[Violation]:
    """Check the three matching constraints over a universe of objects.

    Accepts either an object-level Assignment or a raw per-reference map
    (ref_id -> candidate_id); the latter makes reference-level violations
    expressible. Returns an empty list iff all matched objects satisfy the
    constraints.
    """
    if isinstance(assignment, Assignment):
        for object_id in assignment.matched:
            if object_id not in universe.refs_by_object:
                raise RefmatchError(f"assignment names unknown object {object_id!r}")
        ref_map: dict[str, str] = {}
        for object_id, candidate_id in assignment.matched.items():
            for ref_id in universe.refs_by_object[object_id]:
                ref_map[ref_id] = candidate_id
    else:
        known_refs = {r for refs in universe.refs_by_object.values() for r in refs}
        for ref_id in assignment:
            if ref_id not in known_refs:
                raise RefmatchError(f"assignment names unknown ref {ref_id!r}")
        ref_map = dict(assignment)

    violations: list[Violation] = []
    candidate_users: dict[str, set[str]] = {}
    for object_id in sorted(universe.refs_by_object):
        refs = universe.refs_by_object[object_id]
        assigned = {r: ref_map[r] for r in refs if r in ref_map}
        if not assigned:
            continue  # wholly unmatched objects are allowed
        for ref_id in refs:
            if ref_id not in assigned:
                violations.append(Violation(
                    1, f"reference {ref_id!r} of matched object {object_id!r} "
                       f"has no candidate"))
            elif assigned[ref_id] not in universe.candidates_by_ref.get(ref_id, ()):
                violations.append(Violation(
                    1, f"reference {ref_id!r} assigned candidate "
                       f"{assigned[ref_id]!r} outside its candidate list"))
        distinct = sorted(set(assigned.values()))
        if len(distinct) > 1:
            violations.append(Violation(
                2, f"references of object {object_id!r} assigned different "
                   f"candidates: {distinct}"))
        for cand_id in distinct:
            candidate_users.setdefault(cand_id, set()).add(object_id)
    for cand_id in sorted(candidate_users):
        users = candidate_users[cand_id]
        if len(users) > 1:
            violations.append(Violation(
                3, f"candidate {cand_id!r} assigned to several objects: "
                   f"{sorted(users)}"))
    return violations


# ---------------------------------------------------------------------------
# losses over the matched masks

def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def matched_ce_loss(predictions: Mapping[str, SoftMask], image: ImageRecord,
                    candidates: CandidateSet, assignment: Assignment,
                    ) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy of each matched prediction against its assigned mask.

    The loss is the sum over matched references of the mean per-pixel
    binary cross-entropy (probabilities clamped to [eps, 1-eps]); the
    returned gradients are with respect to the prediction probabilities.
    Unmatched objects contribute zero loss and zero gradient.
    """
    universe = MatchUniverse.from_image(image, candidates)
    violations = check_feasible(assignment, universe)
    if violations:
        raise RefmatchError(
            f"assignment is infeasible: {violations[0].message} "
            f"({len(violations)} violation(s))"
        )
    total = 0.0
    grads: dict[str, np.ndarray] = {}
    for object_id, ref in image.references():
        pred = predictions.get(ref.ref_id)
        if pred is None:
            raise RefmatchError(f"missing prediction for ref {ref.ref_id!r}")
        cand_id = assignment.matched.get(object_id)
        if cand_id is None:
            grads[ref.ref_id] = np.zeros_like(pred.values)
            continue
        target = rle_decode(candidates.candidate(cand_id).mask).astype(np.float64)
        if target.shape != pred.values.shape:
            raise RefmatchError(
                f"prediction/candidate shape mismatch for ref {ref.ref_id!r}: "
                f"{pred.values.shape} vs {target.shape}"
            )
        p = _clamp(pred.values)
        n = p.size
        total += float(-(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean())
        grads[ref.ref_id] = (-target / p + (1.0 - target) / (1.0 - p)) / n
    return total, grads


def active_pixels(mask_a: RleMask, mask_b: RleMask) -> RleMask:
    """Union of two binary masks: the pixels on which the negative
    contrastive term is evaluated."""
    if (mask_a.height, mask_a.width) != (mask_b.height, mask_b.width):
        raise RefmatchError(
            f"mask dimensions differ: {mask_a.height}x{mask_a.width} vs "
            f"{mask_b.height}x{mask_b.width}"
        )
    return rle_encode(rle_decode(mask_a) | rle_decode(mask_b))


def _bernoulli_kl(p: np.ndarray, q: np.ndarray) -> float:
    """Sum over entries of KL(Bernoulli(p) || Bernoulli(q)), clamped inputs."""
    p = _clamp(p)
    q = _clamp(q)
    return float(np.sum(p * (np.log(p) - np.log(q))
                        + (1.0 - p) * (np.log1p(-p) - np.log1p(-q))))


def contrastive_loss(predictions: Mapping[str, SoftMask], image: ImageRecord,
                     candidates: CandidateSet, assignment: Assignment,
                     gamma: float) -> float:
    """Pixel-dense contrastive term over the matched predictions.

    Positive part: for every object, the Bernoulli KL (summed over all
    pixels) between each ordered pair of its references' predictions —
    zero exactly when same-object predictions agree. Negative part: for
    every ordered pair of references of two distinct matched objects, the
    inverse of gamma times the KL restricted to the active pixels (the
    union of the two assigned masks); gamma balances the two parts. The
    denominator KL is clamped below to avoid division blow-up.
    """
    if gamma <= 0:
        raise RefmatchError(f"gamma must be positive, got {gamma}")
    preds: dict[str, np.ndarray] = {}
    for object_id, ref in image.references():
        pred = predictions.get(ref.ref_id)
        if pred is None:
            raise RefmatchError(f"missing prediction for ref {ref.ref_id!r}")
        preds[ref.ref_id] = pred.values

    positive = 0.0
    for obj in image.objects:
        ref_ids = [r.ref_id for r in obj.references]
        for ka, kb in itertools.permutations(ref_ids, 2):
            positive += _bernoulli_kl(preds[ka], preds[kb])

    negative = 0.0
    matched_objects = [obj for obj in image.objects if obj.object_id in assignment.matched]
    active_cache: dict[tuple[str, str], np.ndarray] = {}
    for obj_a, obj_b in itertools.permutations(matched_objects, 2):
        cand_a = assignment.matched[obj_a.object_id]
        cand_b = assignment.matched[obj_b.object_id]
        cache_key = tuple(sorted((cand_a, cand_b)))
        if cache_key not in active_cache:
            union = active_pixels(candidates.candidate(cand_a).mask,
                                  candidates.candidate(cand_b).mask)
            active_cache[cache_key] = rle_decode(union).astype(bool)
        active = active_cache[cache_key]
        for ref_a in obj_a.references:
            pa = preds[ref_a.ref_id][active]
            for ref_b in obj_b.references:
                qb = preds[ref_b.ref_id][active]
                kl = max(_bernoulli_kl(pa, qb), PROB_EPS)
                negative += 1.0 / (gamma * kl)
    return positive + negative


def contrastive_loss_grad(predictions: Mapping[str, SoftMask], image: ImageRecord,
                          candidates: CandidateSet, assignment: Assignment,
                          gamma: float) -> tuple[float, dict[str, np.ndarray]]:
    """contrastive_loss plus its gradient with respect to each prediction.

    Gradients flow through the probability clamp as zero outside
    [eps, 1-eps] and through the KL floor as zero when the floor is
    active.
    """
    if gamma <= 0:
        raise RefmatchError(f"gamma must be positive, got {gamma}")
    preds: dict[str, np.ndarray] = {}
    grads: dict[str, np.ndarray] = {}
    for _object_id, ref in image.references():
        pred = predictions.get(ref.ref_id)
        if pred is None:
            raise RefmatchError(f"missing prediction for ref {ref.ref_id!r}")
        preds[ref.ref_id] = pred.values
        grads[ref.ref_id] = np.zeros_like(pred.values)

    def inside(p: np.ndarray) -> np.ndarray:
        return (p > PROB_EPS) & (p < 1.0 - PROB_EPS)

    def logit(p: np.ndarray) -> np.ndarray:
        return np.log(p) - np.log1p(-p)

    total = 0.0
    for obj in image.objects:
        ref_ids = [r.ref_id for r in obj.references]
        for ka, kb in itertools.permutations(ref_ids, 2):
            p = _clamp(preds[ka])
            q = _clamp(preds[kb])
            total += _bernoulli_kl(preds[ka], preds[kb])
            grads[ka] += (logit(p) - logit(q)) * inside(preds[ka])
            grads[kb] += ((q - p) / (q * (1.0 - q))) * inside(preds[kb])

    matched_objects = [obj for obj in image.objects if obj.object_id in assignment.matched]
    for obj_a, obj_b in itertools.permutations(matched_objects, 2):
        cand_a = assignment.matched[obj_a.object_id]
        cand_b = assignment.matched[obj_b.object_id]
        active = rle_decode(active_pixels(candidates.candidate(cand_a).mask,
                                          candidates.candidate(cand_b).mask)).astype(bool)
        for ref_a in obj_a.references:
            pa_full = preds[ref_a.ref_id]
            pa = _clamp(pa_full[active])
            for ref_b in obj_b.references:
                qb_full = preds[ref_b.ref_id]
                qb = _clamp(qb_full[active])
                kl = _bernoulli_kl(pa_full[active], qb_full[active])
                clamped = kl < PROB_EPS
                kl = max(kl, PROB_EPS)
                total += 1.0 / (gamma * kl)
                if clamped:
                    continue
                scale = -1.0 / (gamma * kl * kl)
                ga = np.zeros_like(pa_full)
                gb = np.zeros_like(qb_full)
                ga[active] = scale * (logit(pa) - logit(qb))
                gb[active] = scale * ((qb - pa) / (qb * (1.0 - qb)))
                grads[ref_a.ref_id] += ga * inside(pa_full)
                grads[ref_b.ref_id] += gb * inside(qb_full)
    return total, grads
