"""Export jobs: populate the downstream JSONL interchange files.

`export_candidates` runs noun extraction, projects each noun onto the
job's label vocabulary by embedding similarity (both sides wrapped in the
"a picture of [CLS]" template), queries the detector for the projected
classes and the segmenter on each detected box, and writes
candidates.jsonl plus a projections.jsonl audit file (extracted phrase and
projected label per reference).

`export_embeddings` then emits text embeddings per reference (full
expression, untemplated), label embeddings per vocabulary entry
(templated), prompted-image embeddings per (image, candidate) after
reverse blurring, and a scores.jsonl with the cosine similarities the
consumer would recompute. Scores are computed from the float32-rounded
vectors that get serialized, so the recomputation agrees exactly.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import make_detector, make_embedder
from .imaging import encode_rle, load_image, reverse_blur
from .nouns import extract_noun

TEMPLATE = "a picture of {}"
BLUR_SIGMA = 50.0


@dataclass(frozen=True)
class ExportJob:
    dataset_path: Path
    image_dir: Path
    vocabulary: tuple[str, ...]
    out_dir: Path
    detector: str = "synthetic"
    embedder: str = "synthetic"
    device: str = "cpu"
    blur_sigma: float = BLUR_SIGMA

    def __post_init__(self):
        if not self.vocabulary:
            raise ValueError("label vocabulary must be non-empty")
        for path in (self.dataset_path, self.image_dir):
            if not Path(path).exists():
                raise FileNotFoundError(f"missing input path: {path}")


def _read_dataset(path: Path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("schema") != "dataset" or header.get("version") != 1:
        raise ValueError(f"{path}: not a version-1 dataset file")
    return [json.loads(line) for line in lines[1:] if line.strip()]


def _image_path(job: ExportJob, record: dict) -> Path:
    rel = record.get("image_path") or f"{record['image_id']}.png"
    direct = Path(job.image_dir) / Path(rel).name
    nested = Path(job.image_dir).parent / rel
    return direct if direct.exists() else nested


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


def _b64(vec: np.ndarray) -> str:
    return base64.b64encode(vec.astype("<f4").tobytes()).decode("ascii")


def _f32(vec: np.ndarray) -> np.ndarray:
    # round-trip through the serialized precision
    return vec.astype("<f4").astype(np.float64)


def project_label(embedder, phrase: str, vocabulary: tuple[str, ...]) -> str:
    phrase_vec = embedder.embed_text(TEMPLATE.format(phrase))
    best, best_score = None, -np.inf
    for label in sorted(vocabulary):
        score = _cosine(phrase_vec, embedder.embed_text(TEMPLATE.format(label)))
        if score > best_score:
            best, best_score = label, score
    return best


def export_candidates(job: ExportJob) -> dict:
    """Write candidates.jsonl and projections.jsonl; returns written paths."""
    detector, segmenter = make_detector(job.detector)
    embedder = make_embedder(job.embedder)
    records = _read_dataset(Path(job.dataset_path))
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cand_lines = [json.dumps({"schema": "candidates", "version": 1})]
    proj_lines = [json.dumps({"schema": "projections", "version": 1})]
    empty_detections: list[tuple[str, str]] = []
    for record in records:
        image_id = record["image_id"]
        image = load_image(_image_path(job, record))
        ref_labels: dict[str, str] = {}
        for obj in record.get("objects", []):
            for ref in obj.get("references", []):
                phrase = extract_noun(ref["text"])
                label = project_label(embedder, phrase, job.vocabulary)
                ref_labels[ref["ref_id"]] = label
                proj_lines.append(json.dumps({
                    "ref_id": ref["ref_id"], "phrase": phrase, "label": label,
                }))
        candidates = []
        by_label: dict[str, list[str]] = {}
        for label in sorted(set(ref_labels.values())):
            detections = detector.detect(image, label)
            if not detections:
                empty_detections.append((image_id, label))
            for det in detections:
                mask = segmenter.segment(image, det.box)
                cand_id = f"c{len(candidates)}"
                candidates.append({
                    "candidate_id": cand_id,
                    "class": label,
                    "mask": encode_rle(mask),
                })
                by_label.setdefault(label, []).append(cand_id)
        per_reference = {ref_id: by_label.get(label, [])
                         for ref_id, label in sorted(ref_labels.items())}
        cand_lines.append(json.dumps({
            "image_id": image_id,
            "candidates": candidates,
            "per_reference": per_reference,
        }))
    cand_path = out_dir / "candidates.jsonl"
    cand_path.write_text("\n".join(cand_lines) + "\n")
    proj_path = out_dir / "projections.jsonl"
    proj_path.write_text("\n".join(proj_lines) + "\n")
    return {"candidates": str(cand_path), "projections": str(proj_path),
            "empty_detections": empty_detections}


def export_embeddings(job: ExportJob, candidates_path: str | Path | None = None) -> dict:
    """Write embeddings.jsonl and scores.jsonl from an exported candidate set."""
    embedder = make_embedder(job.embedder)
    out_dir = Path(job.out_dir)
    candidates_path = Path(candidates_path or out_dir / "candidates.jsonl")
    if not candidates_path.exists():
        raise FileNotFoundError(f"candidates not exported yet: {candidates_path}")
    records = _read_dataset(Path(job.dataset_path))
    cand_lines = candidates_path.read_text(encoding="utf-8").splitlines()
    header = json.loads(cand_lines[0])
    if header.get("schema") != "candidates":
        raise ValueError(f"{candidates_path}: not a candidates file")
    cand_records = {json.loads(l)["image_id"]: json.loads(l)
                    for l in cand_lines[1:] if l.strip()}

    dim = embedder.dim
    emb_lines = [json.dumps({"schema": "embeddings", "version": 1})]
    score_lines = [json.dumps({"schema": "scores", "version": 1})]

    label_vecs = {label: _f32(embedder.embed_text(TEMPLATE.format(label)))
                  for label in sorted(job.vocabulary)}
    text_vecs: dict[str, np.ndarray] = {}
    ref_image: dict[str, str] = {}
    for record in records:
        for obj in record.get("objects", []):
            for ref in obj.get("references", []):
                text_vecs[ref["ref_id"]] = _f32(embedder.embed_text(ref["text"]))
                ref_image[ref["ref_id"]] = record["image_id"]

    prompted_vecs: dict[tuple[str, str], np.ndarray] = {}
    for record in records:
        image_id = record["image_id"]
        cand_record = cand_records.get(image_id)
        if cand_record is None:
            continue
        image = load_image(_image_path(job, record))
        for cand in cand_record["candidates"]:
            counts = cand["mask"]["counts"]
            h, w = cand["mask"]["size"]
            values = np.repeat(np.arange(len(counts)) & 1,
                               counts).reshape((h, w), order="F")
            prompted = reverse_blur(image, values, sigma=job.blur_sigma)
            key = (image_id, cand["candidate_id"])
            prompted_vecs[key] = _f32(embedder.embed_image(prompted))

    for ref_id in sorted(text_vecs):
        emb_lines.append(json.dumps({"kind": "text", "key": ref_id, "dim": dim,
                                     "data": _b64(text_vecs[ref_id])}))
    for label in sorted(label_vecs):
        emb_lines.append(json.dumps({"kind": "label", "key": label, "dim": dim,
                                     "data": _b64(label_vecs[label])}))
    for key in sorted(prompted_vecs):
        emb_lines.append(json.dumps({"kind": "prompted_image", "key": list(key),
                                     "dim": dim, "data": _b64(prompted_vecs[key])}))

    for ref_id in sorted(text_vecs):
        image_id = ref_image[ref_id]
        cand_record = cand_records.get(image_id)
        if cand_record is None:
            continue
        for cand_id in cand_record["per_reference"].get(ref_id, []):
            score = _cosine(text_vecs[ref_id], prompted_vecs[(image_id, cand_id)])
            score_lines.append(json.dumps({
                "ref_id": ref_id, "candidate_id": cand_id,
                "score": float(np.float32(score)),
            }))

    emb_path = out_dir / "embeddings.jsonl"
    emb_path.write_text("\n".join(emb_lines) + "\n")
    score_path = out_dir / "scores.jsonl"
    score_path.write_text("\n".join(score_lines) + "\n")
    return {"embeddings": str(emb_path), "scores": str(score_path)}
