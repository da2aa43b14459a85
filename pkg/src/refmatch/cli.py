"""Command-line entry point binding the pipeline stages together.

Subcommands: validate, select, match, eval, simulate, stats, prompt.
Output files are written atomically; stochastic subcommands require an
explicit seed so every run is reproducible. Errors are reported as one
JSON object on stderr and exit code 1. REFMATCH_THREADS caps how many
worker threads per-image work may use (default: sequential).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import data, evaluation, selection, training
from .errors import RefmatchError
from .masks import SoftMask, reverse_blur_prompt, rle_decode
from .matching import compute_match_scores, greedy_match, matched_ce_loss


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; normalize to 1 with usage text
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def thread_count() -> int:
    """Worker threads allowed for per-image parallel work."""
    raw = os.environ.get("REFMATCH_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def _write_json(payload: dict, path: str | Path) -> None:
    data._atomic_write_lines(path, [json.dumps(payload, indent=2, sort_keys=True)])


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_validate(args) -> int:
    dataset = data.load_dataset(args.dataset)
    candidate_sets = data.load_candidates(args.candidates)
    findings = data.validate_candidates(dataset, candidate_sets)
    report = {
        "findings": [{"kind": f.kind, "message": f.message} for f in findings],
        "count": len(findings),
    }
    if args.out:
        _write_json(report, args.out)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _select_one_image(method, image, cs, scores, gt_by_ref, seed):
    per_reference = {ref.ref_id: cs.per_reference.get(ref.ref_id, ())
                     for _, ref in image.references()}
    if method == "zeroshot":
        return selection.zero_shot_select(scores, per_reference)
    if method == "random":
        return selection.random_select(per_reference, seed)
    if method == "greedy-sim":
        return selection.greedy_select_by_similarity(scores, image, cs)
    if method == "oracle":
        gt_by_object = {}
        for obj in image.objects:
            first_ref = min(r.ref_id for r in obj.references)
            if first_ref not in gt_by_ref:
                raise RefmatchError(f"no ground truth for ref {first_ref!r}")
            gt_by_object[obj.object_id] = gt_by_ref[first_ref]
        return selection.oracle_select(image, cs, gt_by_object)
    raise RefmatchError(f"unknown selection method {method!r}")


def _cmd_select(args) -> int:
    dataset = data.load_dataset(args.dataset)
    candidate_sets = data.load_candidates(args.candidates)
    scores: dict[tuple[str, str], float] = {}
    if args.method in ("zeroshot", "greedy-sim"):
        if args.scores:
            scores = data.load_scores(args.scores)
        elif args.embeddings:
            table = data.load_embeddings(args.embeddings)
            for image in dataset.images:
                cs = candidate_sets.get(image.image_id)
                if cs is None:
                    raise RefmatchError(f"no candidates for image {image.image_id!r}")
                per_ref = {ref.ref_id: cs.per_reference.get(ref.ref_id, ())
                           for _, ref in image.references()}
                scores.update(selection.scores_from_embeddings(
                    table, image.image_id, per_ref))
        else:
            raise RefmatchError(f"method {args.method!r} needs --scores or --embeddings")
    if args.method == "random" and args.seed is None:
        raise RefmatchError("--seed is required for random selection")
    gt_by_ref = data.load_groundtruth(args.groundtruth) if args.groundtruth else {}
    if args.method == "oracle" and not gt_by_ref:
        raise RefmatchError("oracle selection needs --groundtruth")

    selected: dict[str, str] = {}
    for image in dataset.images:
        cs = candidate_sets.get(image.image_id)
        if cs is None:
            raise RefmatchError(f"no candidates for image {image.image_id!r}")
        selected.update(_select_one_image(args.method, image, cs, scores,
                                          gt_by_ref, args.seed))
    data.save_selections(selected, args.out)
    return 0


def _cmd_match(args) -> int:
    dataset = data.load_dataset(args.dataset)
    candidate_sets = data.load_candidates(args.candidates)
    predictions = data.load_predictions(args.predictions)

    def match_image(image):
        cs = candidate_sets.get(image.image_id)
        if cs is None:
            raise RefmatchError(f"no candidates for image {image.image_id!r}")
        preds = {}
        for _, ref in image.references():
            if ref.ref_id not in predictions:
                raise RefmatchError(f"missing prediction for ref {ref.ref_id!r}")
            mask = predictions[ref.ref_id]
            if not isinstance(mask, SoftMask):
                mask = SoftMask(rle_decode(mask).astype(float))
            preds[ref.ref_id] = mask
        scores = compute_match_scores(preds, image, cs)
        assignment = greedy_match(scores)
        loss, _ = matched_ce_loss(preds, image, cs, assignment)
        per_object = {obj.object_id: assignment.matched.get(obj.object_id)
                      for obj in image.objects}
        return image.image_id, per_object, loss

    workers = thread_count()
    if workers > 1 and len(dataset.images) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(match_image, dataset.images))
    else:
        results = [match_image(image) for image in dataset.images]

    assignments = {image_id: per_object for image_id, per_object, _ in results}
    data.save_assignments(assignments, args.out)
    report = {
        "matched_ce_total": sum(loss for _, _, loss in results),
        "per_image": {image_id: {"matched_ce": loss}
                      for image_id, _, loss in sorted(results)},
    }
    if args.report:
        _write_json(report, args.report)
    return 0


def _cmd_eval(args) -> int:
    predictions = data.load_predictions(args.predictions)
    ground_truth = data.load_groundtruth(args.groundtruth)
    report = evaluation.evaluate(predictions, ground_truth, threshold=args.threshold)
    _write_json(report.to_dict(), args.out)
    if args.csv:
        lines = ["ref_id,iou"]
        lines += [f"{ref_id},{iou_value:.6f}"
                  for ref_id, iou_value in sorted(report.per_reference.items())]
        data._atomic_write_lines(args.csv, lines)
    return 0


def _cmd_simulate(args) -> int:
    if args.scenario == "fig5":
        scenario = training.fig5_scenario(grid=args.grid)
    else:
        scenario = training.random_scenario(
            n_images=args.images, n_objects=args.objects,
            n_candidates=args.candidates, grid=args.grid, seed=args.seed,
        )
    cfg = training.TrainConfig(
        pretrain_steps=args.steps, correct_steps=args.steps,
        learning_rate=args.lr, gamma=args.gamma, seed=args.seed,
    )
    report = training.run_experiment(scenario.dataset, scenario.candidates,
                                     scenario.selection, scenario.ground_truth, cfg)
    payload = report.to_dict()
    payload["scenario"] = {
        "name": args.scenario,
        "grid": args.grid,
        "images": scenario.dataset.n_images,
        "objects": scenario.dataset.n_objects,
        "references": scenario.dataset.n_references,
    }
    _write_json(payload, args.out)
    return 0


def _cmd_stats(args) -> int:
    dataset = data.load_dataset(args.dataset)
    stats = data.objects_per_image_stats(dataset)
    if args.out:
        _write_json(stats.to_dict(), args.out)
    else:
        print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_prompt(args) -> int:
    image = data.load_image(args.image)
    with open(args.mask, "r", encoding="utf-8") as fh:
        mask_obj = json.load(fh)
    mask = data.mask_from_json(mask_obj, locus=str(args.mask))
    if isinstance(mask, SoftMask):
        raise RefmatchError("prompting needs a binary RLE mask")
    prompted = reverse_blur_prompt(image, mask, sigma=args.sigma)
    data.save_image(prompted, args.out)
    return 0


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="refmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="cross-check a dataset against its candidates")
    p.add_argument("--dataset", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("select", help="pick one candidate mask per reference")
    p.add_argument("--dataset", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--scores", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--groundtruth", default=None)
    p.add_argument("--method", default="zeroshot",
                   choices=["zeroshot", "random", "oracle", "greedy-sim"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("match", help="greedy-match predictions to candidate masks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("eval", help="oIoU/mIoU of predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--groundtruth", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("simulate", help="run a synthetic correction experiment")
    p.add_argument("--scenario", default="fig5", choices=["fig5", "random"])
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--candidates", type=int, default=6)
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("stats", help="objects-per-image histogram of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("prompt", help="reverse-blur an image outside a mask")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True, help="JSON file with {'size', 'counts'}")
    p.add_argument("--sigma", type=float, default=50.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prompt)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RefmatchError as exc:
        sys.stderr.write(json.dumps({
            "error": type(exc).__name__,
            "message": str(exc),
        }) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
