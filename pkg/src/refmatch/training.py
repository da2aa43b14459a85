"""Desk-scale correction dynamics on synthetic referring-segmentation data.

The model here is deliberately tiny: one independent logit grid per
referring expression, predictions taken through an elementwise sigmoid.
That strips away any architecture so the training runs isolate what the
matching loss itself does: pretraining fits the per-reference selected
masks; the correction phase re-matches candidates to objects every step
with the constrained greedy scan and trains against the matched masks,
which lets an initially mis-selected object migrate to the right
candidate once a competing object claims the contested one.

Gradient steps use the per-pixel cross-entropy gradient in logit space,
sigma(z) - target, i.e. plain gradient descent on the pixel-summed BCE;
the loss recorded in traces is the per-pixel mean, so the descent
direction is identical up to a positive constant.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .data import (Candidate, CandidateSet, ImageRecord, ObjectRecord, Reference,
                   ReferringDataset)
from .errors import RefmatchError
from .evaluation import MetricsReport, evaluate
from .masks import RleMask, SoftMask, rle_decode, rle_encode
from .matching import (Assignment, compute_match_scores, contrastive_loss_grad,
                       greedy_match, matched_ce_loss)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the toy training runs.

    Step counts may be zero (a zero-step run returns the model unchanged);
    the learning rate and, when given, the contrastive balance gamma must
    be positive.
    """

    pretrain_steps: int = 200
    correct_steps: int = 200
    learning_rate: float = 0.5
    gamma: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_steps < 0 or self.correct_steps < 0:
            raise RefmatchError("step counts must be non-negative")
        if self.learning_rate <= 0:
            raise RefmatchError(f"learning rate must be positive, got {self.learning_rate}")
        if self.gamma is not None and self.gamma <= 0:
            raise RefmatchError(f"gamma must be positive, got {self.gamma}")

    def to_dict(self) -> dict:
        return {
            "pretrain_steps": self.pretrain_steps,
            "correct_steps": self.correct_steps,
            "learning_rate": self.learning_rate,
            "gamma": self.gamma,
            "seed": self.seed,
        }


@dataclass
class ToyModel:
    """One logit grid per reference; prediction = sigmoid(logits)."""

    logits: dict[str, np.ndarray]

    def copy(self) -> "ToyModel":
        return ToyModel(logits={k: v.copy() for k, v in self.logits.items()})

    def prediction(self, ref_id: str) -> SoftMask:
        return SoftMask(expit(self.logits[ref_id]))

    def predictions(self) -> dict[str, SoftMask]:
        return {ref_id: self.prediction(ref_id) for ref_id in sorted(self.logits)}


def new_model(dataset: ReferringDataset,
              candidates: Mapping[str, CandidateSet]) -> ToyModel:
    """Zero-initialized model with one grid per reference, sized after the
    candidate masks of the reference's image."""
    logits: dict[str, np.ndarray] = {}
    for image in dataset.images:
        cs = candidates.get(image.image_id)
        if cs is None or not cs.candidates:
            raise RefmatchError(f"image {image.image_id!r} has no candidate masks")
        mask = cs.candidates[0].mask
        for _, ref in image.references():
            logits[ref.ref_id] = np.zeros((mask.height, mask.width), dtype=np.float64)
    return ToyModel(logits=logits)


def _selected_targets(model: ToyModel, selection: Mapping[str, str],
                      dataset: ReferringDataset,
                      candidates: Mapping[str, CandidateSet]) -> dict[str, np.ndarray]:
    targets: dict[str, np.ndarray] = {}
    for ref_id in model.logits:
        if ref_id not in selection:
            raise RefmatchError(f"no selected candidate for ref {ref_id!r}")
        image_id = dataset.image_of_reference(ref_id)
        cand = candidates[image_id].candidate(selection[ref_id])
        targets[ref_id] = rle_decode(cand.mask).astype(np.float64)
    return targets


def pretrain(model: ToyModel, selection: Mapping[str, str],
             dataset: ReferringDataset, candidates: Mapping[str, CandidateSet],
             cfg: TrainConfig) -> ToyModel:
    """Fit each reference's prediction to its selected candidate mask.

    Runs cfg.pretrain_steps of gradient descent on the per-pixel BCE
    toward the fixed selected masks and returns a new model; the input
    model is untouched.
    """
    targets = _selected_targets(model, selection, dataset, candidates)
    out = model.copy()
    for _ in range(cfg.pretrain_steps):
        for ref_id in sorted(out.logits):
            z = out.logits[ref_id]
            z -= cfg.learning_rate * (expit(z) - targets[ref_id])
    return out


@dataclass(frozen=True)
class TraceStep:
    """Matching state recorded at one correction step."""

    step: int
    assignments: Mapping[str, Assignment]  # image_id -> Assignment
    matched_ce: float
    contrastive: float | None = None


def correct_train(model: ToyModel, dataset: ReferringDataset,
                  candidates: Mapping[str, CandidateSet],
                  cfg: TrainConfig) -> tuple[ToyModel, list[TraceStep]]:
    """Re-match and train against the matched candidate masks every step.

    Each step, per image: forward pass, soft-IoU match scores, constrained
    greedy matching, cross-entropy toward the matched masks (plus the
    contrastive term when cfg.gamma is set), one gradient step. The trace
    records the assignment and losses at every step. References of
    unmatched objects receive no cross-entropy update.
    """
    out = model.copy()
    trace: list[TraceStep] = []
    images = sorted(dataset.images, key=lambda im: im.image_id)
    decoded: dict[str, dict[str, np.ndarray]] = {
        image.image_id: {
            c.candidate_id: rle_decode(c.mask).astype(np.float64)
            for c in candidates[image.image_id].candidates
        }
        for image in images
    }
    for step in range(cfg.correct_steps):
        total_ce = 0.0
        total_con = 0.0
        assignments: dict[str, Assignment] = {}
        updates: dict[str, np.ndarray] = {}
        for image in images:
            cs = candidates[image.image_id]
            preds = {ref.ref_id: SoftMask(expit(out.logits[ref.ref_id]))
                     for _, ref in image.references()}
            scores = compute_match_scores(preds, image, cs)
            assignment = greedy_match(scores)
            assignments[image.image_id] = assignment
            ce, _ = matched_ce_loss(preds, image, cs, assignment)
            total_ce += ce
            for object_id, ref in image.references():
                cand_id = assignment.matched.get(object_id)
                if cand_id is None:
                    continue
                target = decoded[image.image_id][cand_id]
                updates[ref.ref_id] = preds[ref.ref_id].values - target
            if cfg.gamma is not None:
                con, cgrads = contrastive_loss_grad(preds, image, cs, assignment,
                                                    cfg.gamma)
                total_con += con
                for ref_id, grad in cgrads.items():
                    p = preds[ref_id].values
                    delta = grad * p * (1.0 - p)
                    updates[ref_id] = updates.get(ref_id, 0.0) + delta
        for ref_id, delta in updates.items():
            out.logits[ref_id] -= cfg.learning_rate * delta
        trace.append(TraceStep(
            step=step,
            assignments=assignments,
            matched_ce=total_ce,
            contrastive=total_con if cfg.gamma is not None else None,
        ))
    return out, trace


# ---------------------------------------------------------------------------
# synthetic scenarios

@dataclass(frozen=True)
class Scenario:
    """A synthetic weakly-supervised problem with known ground truth."""

    dataset: ReferringDataset
    candidates: dict[str, CandidateSet]
    ground_truth: dict[str, RleMask]  # ref_id -> true mask
    selection: dict[str, str]         # ref_id -> initially selected candidate


def _rect_mask(grid: int, top: int, left: int, height: int, width: int) -> RleMask:
    arr = np.zeros((grid, grid), dtype=np.uint8)
    arr[top:top + height, left:left + width] = 1
    return rle_encode(arr)


def fig5_scenario(grid: int = 16) -> Scenario:
    """Two objects, two shared candidates, one zero-shot selection wrong.

    Both objects start out selected to candidate "a"; the true pairing is
    obj0 -> "a", obj1 -> "b". Correction should migrate obj1 onto "b" once
    obj0 claims "a", while training on the fixed selections cannot.
    """
    if grid < 12:
        raise RefmatchError(f"grid too small for the two-candidate layout: {grid}")
    half = grid // 2
    mask_a = _rect_mask(grid, grid // 4, 1, half, half - 2)
    mask_b = _rect_mask(grid, grid // 4, half + 1, half, half - 2)
    candidates = CandidateSet(
        image_id="img0",
        candidates=(
            Candidate(candidate_id="a", label="thing", mask=mask_a),
            Candidate(candidate_id="b", label="thing", mask=mask_b),
        ),
        per_reference={
            "ref0": ("a", "b"), "ref1": ("a", "b"),
            "ref2": ("a", "b"), "ref3": ("a", "b"),
        },
    )
    dataset = ReferringDataset(images=(
        ImageRecord(
            image_id="img0",
            objects=(
                ObjectRecord(object_id="obj0", references=(
                    Reference("ref0", "the left thing"),
                    Reference("ref1", "thing on the left side"),
                )),
                ObjectRecord(object_id="obj1", references=(
                    Reference("ref2", "the right thing"),
                    Reference("ref3", "thing on the right side"),
                )),
            ),
        ),
    ))
    ground_truth = {"ref0": mask_a, "ref1": mask_a, "ref2": mask_b, "ref3": mask_b}
    selection = {"ref0": "a", "ref1": "a", "ref2": "a", "ref3": "a"}
    return Scenario(dataset=dataset, candidates={"img0": candidates},
                    ground_truth=ground_truth, selection=selection)


def random_scenario(n_images: int = 8, n_objects: int = 3, n_candidates: int = 6,
                    grid: int = 16, refs_per_object: int = 3,
                    error_rate: float = 0.3, seed: int = 0) -> Scenario:
    """Random benchmark with noisy initial selections.

    Every image holds n_objects disjoint whole-object rectangles (the true
    masks) and, when n_candidates exceeds n_objects, additional small part
    masks carved out of them — mirroring candidate pools that mix whole
    instances with fragments of them. Each reference selects its true
    candidate with probability 1 - error_rate; a mis-selection lands on a
    part mask of another object (of its own object when there is only
    one). Because a converged prediction scores lower against a small part
    than a whole-object claim does against its mask, greedy matching
    settles whole objects first and the per-object consistency constraint
    then pulls mis-selected references back to their object's mask.
    """
    if n_objects > n_candidates:
        raise RefmatchError("need at least as many candidates as objects")
    if not 0.0 <= error_rate < 1.0:
        raise RefmatchError(f"error_rate must be in [0, 1), got {error_rate}")
    block = 4
    per_side = grid // block
    if per_side * per_side < n_objects:
        raise RefmatchError(
            f"grid {grid} fits at most {per_side * per_side} disjoint objects"
        )
    if n_candidates > 2 * n_objects:
        raise RefmatchError("at most one part mask per object is generated")
    rng = np.random.default_rng(seed)
    images = []
    candidate_sets: dict[str, CandidateSet] = {}
    ground_truth: dict[str, RleMask] = {}
    selection: dict[str, str] = {}
    for i in range(n_images):
        image_id = f"img{i:03d}"
        slots = rng.choice(per_side * per_side, size=n_objects, replace=False)
        rects = []
        for slot in sorted(int(s) for s in slots):
            top = (slot // per_side) * block
            left = (slot % per_side) * block
            h = int(rng.integers(3, block + 1))
            w = int(rng.integers(3, block + 1))
            dy = int(rng.integers(0, block - h + 1))
            dx = int(rng.integers(0, block - w + 1))
            rects.append((top + dy, left + dx, h, w))
        cands = [Candidate(candidate_id=f"cand{j}", label="thing",
                           mask=_rect_mask(grid, *rect))
                 for j, rect in enumerate(rects)]
        part_of: dict[int, str] = {}  # object index -> part candidate id
        for p in range(n_candidates - n_objects):
            top, left, h, w = rects[p]
            dy = int(rng.integers(0, h - 1))
            dx = int(rng.integers(0, w - 1))
            part_id = f"part{p}"
            part_of[p] = part_id
            cands.append(Candidate(candidate_id=part_id, label="thing",
                                   mask=_rect_mask(grid, top + dy, left + dx, 2, 2)))
        cand_ids = tuple(c.candidate_id for c in cands)
        objects = []
        per_reference: dict[str, tuple[str, ...]] = {}
        for j in range(n_objects):
            refs = []
            true_cand = f"cand{j}"
            wrong_pool = [part_of[p] for p in part_of if p != j or n_objects == 1]
            for k in range(refs_per_object):
                ref_id = f"{image_id}-obj{j}-ref{k}"
                refs.append(Reference(ref_id, f"object {j} of image {i}"))
                per_reference[ref_id] = cand_ids
                ground_truth[ref_id] = cands[j].mask
                if wrong_pool and rng.random() < error_rate:
                    selection[ref_id] = wrong_pool[int(rng.integers(len(wrong_pool)))]
                else:
                    selection[ref_id] = true_cand
            objects.append(ObjectRecord(object_id=f"obj{j}", references=tuple(refs)))
        images.append(ImageRecord(image_id=image_id, objects=tuple(objects)))
        candidate_sets[image_id] = CandidateSet(
            image_id=image_id, candidates=tuple(cands), per_reference=per_reference
        )
    return Scenario(dataset=ReferringDataset(images=tuple(images)),
                    candidates=candidate_sets, ground_truth=ground_truth,
                    selection=selection)


# ---------------------------------------------------------------------------
# experiment driver

@dataclass(frozen=True)
class ExperimentReport:
    """Metrics of the three models plus a summary of the matching trace."""

    pretrained: MetricsReport
    ablation: MetricsReport
    corrected: MetricsReport
    assignment_changes: int
    final_assignments: dict[str, dict[str, str | None]]
    config: TrainConfig

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "metrics": {
                "pretrained": self.pretrained.to_dict(),
                "ablation": self.ablation.to_dict(),
                "corrected": self.corrected.to_dict(),
            },
            "matching": {
                "assignment_changes": self.assignment_changes,
                "final": self.final_assignments,
            },
        }


def _assignments_as_dict(assignments: Mapping[str, Assignment],
                         dataset: ReferringDataset) -> dict[str, dict[str, str | None]]:
    out: dict[str, dict[str, str | None]] = {}
    for image in dataset.images:
        asg = assignments.get(image.image_id)
        per_obj: dict[str, str | None] = {}
        for obj in image.objects:
            per_obj[obj.object_id] = None if asg is None else asg.matched.get(obj.object_id)
        out[image.image_id] = per_obj
    return out


def run_experiment(dataset: ReferringDataset, candidates: Mapping[str, CandidateSet],
                   selection: Mapping[str, str], ground_truth: Mapping[str, RleMask],
                   cfg: TrainConfig) -> ExperimentReport:
    """Pretrain on the selections, then branch: keep training on them
    (ablation) versus correcting with greedy matching. Reports oIoU/mIoU
    of all three models against the ground truth."""
    base = new_model(dataset, candidates)
    pretrained = pretrain(base, selection, dataset, candidates, cfg)
    ablation = pretrain(pretrained, selection, dataset, candidates,
                        dataclasses.replace(cfg, pretrain_steps=cfg.correct_steps))
    corrected, trace = correct_train(pretrained, dataset, candidates, cfg)

    def metrics(model: ToyModel) -> MetricsReport:
        return evaluate(model.predictions(), dict(ground_truth), threshold=0.5)

    changes = sum(
        1 for prev, cur in zip(trace, trace[1:]) if prev.assignments != cur.assignments
    )
    final = _assignments_as_dict(trace[-1].assignments if trace else {}, dataset)
    return ExperimentReport(
        pretrained=metrics(pretrained),
        ablation=metrics(ablation),
        corrected=metrics(corrected),
        assignment_changes=changes,
        final_assignments=final,
        config=cfg,
    )
