"""Command-line front end for the export jobs.

Mirrors the consumer's CLI flag style: long flags, JSONL in and out,
errors as JSON on stderr with exit code 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backends import BackendUnavailable
from .export import ExportJob, export_candidates, export_embeddings
from .synthetic import write_fixture


def _job(args) -> ExportJob:
    return ExportJob(
        dataset_path=Path(args.dataset),
        image_dir=Path(args.images),
        vocabulary=tuple(v.strip() for v in args.vocab.split(",") if v.strip()),
        out_dir=Path(args.out_dir),
        detector=args.detector,
        embedder=args.embedder,
        device=args.device,
        blur_sigma=args.sigma,
    )


def _cmd_candidates(args) -> int:
    result = export_candidates(_job(args))
    print(json.dumps(result))
    return 0


def _cmd_embeddings(args) -> int:
    result = export_embeddings(_job(args), candidates_path=args.candidates)
    print(json.dumps(result))
    return 0


def _cmd_fixture(args) -> int:
    result = write_fixture(args.out_dir, n_images=args.images_count, seed=args.seed)
    print(json.dumps(result))
    return 0


def _add_job_flags(p):
    p.add_argument("--dataset", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--vocab", required=True, help="comma-separated label vocabulary")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--detector", default="synthetic")
    p.add_argument("--embedder", default="synthetic")
    p.add_argument("--device", default="cpu")
    p.add_argument("--sigma", type=float, default=50.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refmatch-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("candidates", help="detect and segment candidate masks")
    _add_job_flags(p)
    p.set_defaults(func=_cmd_candidates)

    p = sub.add_parser("embeddings", help="embed texts, labels, prompted images")
    _add_job_flags(p)
    p.add_argument("--candidates", default=None,
                   help="candidates.jsonl (default: <out-dir>/candidates.jsonl)")
    p.set_defaults(func=_cmd_embeddings)

    p = sub.add_parser("fixture", help="generate a synthetic mini dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--images-count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BackendUnavailable, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(json.dumps({
            "error": type(exc).__name__, "message": str(exc),
        }) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
