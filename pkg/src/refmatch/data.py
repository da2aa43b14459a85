"""Canonical data schemas and JSONL interchange files.

Every interchange file is JSON Lines with a top-line header record
``{"schema": <name>, "version": 1}``. The schemas:

- ``dataset.jsonl``     one image per line:
  ``{"image_id", "image_path"?, "objects": [{"object_id",
  "references": [{"ref_id", "text"}]}]}``
- ``candidates.jsonl``  one image per line:
  ``{"image_id", "candidates": [{"candidate_id", "class",
  "mask": {"size": [H, W], "counts": [...]}}],
  "per_reference": {ref_id: [candidate_id, ...]}}``
- ``embeddings.jsonl``  ``{"kind": "text"|"label"|"prompted_image",
  "key": ..., "dim": e, "data": <base64 or float list>}`` where the
  prompted-image key is the pair ``[image_id, candidate_id]``
- ``scores.jsonl``      ``{"ref_id", "candidate_id", "score"}``
- ``selections.jsonl``  ``{"ref_id", "candidate_id"}``
- ``predictions.jsonl`` ``{"ref_id", "mask": ...}`` where the mask is
  either binary RLE ``{"size", "counts"}`` or a soft grid
  ``{"size", "dtype": "float32", "data": <base64>}``
- ``groundtruth.jsonl`` ``{"ref_id", "mask": {"size", "counts"}}``
- ``assignments.jsonl`` ``{"image_id", "object_id", "candidate_id"|null}``

Embedding vectors are serialized as base64-encoded little-endian float32;
a plain JSON float array is also accepted on read. All identifiers are
strings; tie-breaking rules elsewhere in the toolkit order them
lexicographically. ``ref_id`` is unique across the whole dataset (several
files key records by it alone), ``object_id`` is unique within its image,
``image_id`` is unique across the file.

Files are written atomically (temp file + rename). Loaded structures are
immutable and safe to share across threads.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import RefmatchError, SchemaError
from .masks import ImageBuffer, RleMask, SoftMask

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Reference:
    ref_id: str
    text: str


@dataclass(frozen=True)
class ObjectRecord:
    object_id: str
    references: tuple[Reference, ...]

    def __post_init__(self):
        if not self.references:
            raise SchemaError(f"object {self.object_id!r} has no references")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    objects: tuple[ObjectRecord, ...]
    image_path: str | None = None

    def __post_init__(self):
        seen = set()
        for obj in self.objects:
            if obj.object_id in seen:
                raise SchemaError(
                    f"duplicate object_id {obj.object_id!r} in image {self.image_id!r}"
                )
            seen.add(obj.object_id)

    def references(self) -> Iterator[tuple[str, Reference]]:
        """Yield (object_id, reference) pairs in record order."""
        for obj in self.objects:
            for ref in obj.references:
                yield obj.object_id, ref


@dataclass(frozen=True)
class ReferringDataset:
    """Images -> objects -> referring expressions."""

    images: tuple[ImageRecord, ...]
    _image_of_ref: dict = field(init=False, repr=False, compare=False)
    _images_by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        images_by_id: dict[str, ImageRecord] = {}
        image_of_ref: dict[str, str] = {}
        for image in self.images:
            if image.image_id in images_by_id:
                raise SchemaError(f"duplicate image_id {image.image_id!r}")
            images_by_id[image.image_id] = image
            for _, ref in image.references():
                if ref.ref_id in image_of_ref:
                    raise SchemaError(f"duplicate ref_id {ref.ref_id!r}")
                image_of_ref[ref.ref_id] = image.image_id
        object.__setattr__(self, "_images_by_id", images_by_id)
        object.__setattr__(self, "_image_of_ref", image_of_ref)

    def image(self, image_id: str) -> ImageRecord:
        try:
            return self._images_by_id[image_id]
        except KeyError:
            raise RefmatchError(f"unknown image_id {image_id!r}") from None

    def image_of_reference(self, ref_id: str) -> str:
        try:
            return self._image_of_ref[ref_id]
        except KeyError:
            raise RefmatchError(f"unknown ref_id {ref_id!r}") from None

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_objects(self) -> int:
        return sum(len(img.objects) for img in self.images)

    @property
    def n_references(self) -> int:
        return len(self._image_of_ref)


@dataclass(frozen=True)
class Candidate:
    candidate_id: str
    label: str
    mask: RleMask


@dataclass(frozen=True)
class CandidateSet:
    """Candidate masks of one image plus per-reference candidate lists."""

    image_id: str
    candidates: tuple[Candidate, ...]
    per_reference: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        by_id: dict[str, Candidate] = {}
        for cand in self.candidates:
            if cand.candidate_id in by_id:
                raise SchemaError(
                    f"duplicate candidate_id {cand.candidate_id!r} in image {self.image_id!r}"
                )
            by_id[cand.candidate_id] = cand
        for ref_id, cand_ids in self.per_reference.items():
            for cid in cand_ids:
                if cid not in by_id:
                    raise SchemaError(
                        f"reference {ref_id!r} points at unknown candidate {cid!r} "
                        f"in image {self.image_id!r}"
                    )
        object.__setattr__(self, "per_reference", dict(self.per_reference))
        object.__setattr__(self, "_by_id", by_id)

    def candidate(self, candidate_id: str) -> Candidate:
        try:
            return self._by_id[candidate_id]  # type: ignore[attr-defined]
        except KeyError:
            raise RefmatchError(
                f"unknown candidate_id {candidate_id!r} in image {self.image_id!r}"
            ) from None


@dataclass
class EmbeddingTable:
    """Fixed-dimension embedding vectors keyed by kind.

    text: ref_id -> vector, label: class label -> vector,
    prompted_image: (image_id, candidate_id) -> vector.
    """

    dim: int
    text: dict[str, np.ndarray] = field(default_factory=dict)
    label: dict[str, np.ndarray] = field(default_factory=dict)
    prompted_image: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def add(self, kind: str, key, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != self.dim:
            raise SchemaError(
                f"embedding for {kind}/{key!r} has dimension {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise SchemaError(f"embedding for {kind}/{key!r} contains NaN or Inf")
        table = {"text": self.text, "label": self.label, "prompted_image": self.prompted_image}
        if kind not in table:
            raise SchemaError(f"unknown embedding kind {kind!r}")
        table[kind][key] = vec


# ---------------------------------------------------------------------------
# low-level JSONL plumbing

def _atomic_write_lines(path: str | Path, lines: Iterable[str]) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_records(path: str | Path, schema: str) -> Iterator[tuple[str, dict]]:
    """Yield (locus, record) for each body line after checking the header."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        locus = f"{path}:1"
        if not header_line.strip():
            raise SchemaError("missing header record", locus=locus)
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", locus=locus) from None
        if not isinstance(header, dict) or header.get("schema") != schema:
            raise SchemaError(
                f"expected header {{'schema': {schema!r}, ...}}, got {header_line.strip()}",
                locus=locus,
            )
        if header.get("version") != SCHEMA_VERSION:
            raise SchemaError(
                f"unsupported {schema} schema version {header.get('version')!r}",
                locus=locus,
            )
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            locus = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", locus=locus) from None
            if not isinstance(record, dict):
                raise SchemaError("record must be a JSON object", locus=locus)
            yield locus, record


def _header(schema: str) -> str:
    return json.dumps({"schema": schema, "version": SCHEMA_VERSION})


def _require_str(record: dict, key: str, locus: str) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaError(f"field {key!r} must be a non-empty string", locus=locus)
    return value


# ---------------------------------------------------------------------------
# mask (de)serialization

def mask_to_json(mask: RleMask | SoftMask) -> dict:
    if isinstance(mask, RleMask):
        return {"size": [mask.height, mask.width], "counts": list(mask.counts)}
    if isinstance(mask, SoftMask):
        data = mask.values.astype("<f4").tobytes(order="C")
        return {
            "size": [mask.height, mask.width],
            "dtype": "float32",
            "data": base64.b64encode(data).decode("ascii"),
        }
    raise RefmatchError(f"cannot serialize mask of type {type(mask).__name__}")


def mask_from_json(obj: dict, locus: str | None = None) -> RleMask | SoftMask:
    if not isinstance(obj, dict) or "size" not in obj:
        raise SchemaError("mask must be an object with a 'size' field", locus=locus)
    size = obj["size"]
    if (not isinstance(size, list) or len(size) != 2
            or not all(isinstance(s, int) and s > 0 for s in size)):
        raise SchemaError(f"mask size must be [H, W] positive ints, got {size!r}", locus=locus)
    height, width = size
    if "counts" in obj:
        counts = obj["counts"]
        if not isinstance(counts, list) or not all(isinstance(c, int) for c in counts):
            raise SchemaError("mask counts must be a list of integers", locus=locus)
        try:
            return RleMask(height=height, width=width, counts=tuple(counts))
        except RefmatchError as exc:
            raise SchemaError(str(exc), locus=locus) from None
    if "data" in obj:
        if obj.get("dtype", "float32") != "float32":
            raise SchemaError(f"unsupported soft mask dtype {obj.get('dtype')!r}", locus=locus)
        try:
            raw = base64.b64decode(obj["data"], validate=True)
        except Exception as exc:
            raise SchemaError(f"invalid base64 mask data: {exc}", locus=locus) from None
        values = np.frombuffer(raw, dtype="<f4")
        if values.size != height * width:
            raise SchemaError(
                f"soft mask data holds {values.size} values, expected {height * width}",
                locus=locus,
            )
        try:
            return SoftMask(values.reshape(height, width).astype(np.float64))
        except RefmatchError as exc:
            raise SchemaError(str(exc), locus=locus) from None
    raise SchemaError("mask must carry either 'counts' or 'data'", locus=locus)


def _binary_mask_from_json(obj: dict, locus: str | None = None) -> RleMask:
    mask = mask_from_json(obj, locus=locus)
    if not isinstance(mask, RleMask):
        raise SchemaError("expected a binary RLE mask", locus=locus)
    return mask


# ---------------------------------------------------------------------------
# dataset file

def load_dataset(path: str | Path) -> ReferringDataset:
    """Load and validate dataset.jsonl."""
    images: list[ImageRecord] = []
    seen_images: dict[str, str] = {}
    seen_refs: dict[str, str] = {}
    for locus, record in _read_records(path, "dataset"):
        image_id = _require_str(record, "image_id", locus)
        if image_id in seen_images:
            raise SchemaError(
                f"duplicate image_id {image_id!r} (first seen at {seen_images[image_id]})",
                locus=locus,
            )
        seen_images[image_id] = locus
        image_path = record.get("image_path")
        if image_path is not None and not isinstance(image_path, str):
            raise SchemaError("field 'image_path' must be a string when present", locus=locus)
        raw_objects = record.get("objects")
        if not isinstance(raw_objects, list) or not raw_objects:
            raise SchemaError("field 'objects' must be a non-empty list", locus=locus)
        objects: list[ObjectRecord] = []
        seen_objects: set[str] = set()
        for raw_obj in raw_objects:
            if not isinstance(raw_obj, dict):
                raise SchemaError("object entries must be JSON objects", locus=locus)
            object_id = _require_str(raw_obj, "object_id", locus)
            if object_id in seen_objects:
                raise SchemaError(f"duplicate object_id {object_id!r}", locus=locus)
            seen_objects.add(object_id)
            raw_refs = raw_obj.get("references")
            if not isinstance(raw_refs, list) or not raw_refs:
                raise SchemaError(
                    f"object {object_id!r} must have a non-empty 'references' list",
                    locus=locus,
                )
            references = []
            for raw_ref in raw_refs:
                if not isinstance(raw_ref, dict):
                    raise SchemaError("reference entries must be JSON objects", locus=locus)
                ref_id = _require_str(raw_ref, "ref_id", locus)
                if ref_id in seen_refs:
                    raise SchemaError(
                        f"duplicate ref_id {ref_id!r} (first seen at {seen_refs[ref_id]})",
                        locus=locus,
                    )
                seen_refs[ref_id] = locus
                text = raw_ref.get("text")
                if not isinstance(text, str):
                    raise SchemaError(f"reference {ref_id!r} must carry a 'text' string",
                                      locus=locus)
                references.append(Reference(ref_id=ref_id, text=text))
            objects.append(ObjectRecord(object_id=object_id, references=tuple(references)))
        images.append(ImageRecord(image_id=image_id, objects=tuple(objects),
                                  image_path=image_path))
    return ReferringDataset(images=tuple(images))


def save_dataset(dataset: ReferringDataset, path: str | Path) -> None:
    def lines():
        yield _header("dataset")
        for image in dataset.images:
            record: dict = {
                "image_id": image.image_id,
                "objects": [
                    {
                        "object_id": obj.object_id,
                        "references": [
                            {"ref_id": r.ref_id, "text": r.text} for r in obj.references
                        ],
                    }
                    for obj in image.objects
                ],
            }
            if image.image_path is not None:
                record["image_path"] = image.image_path
            yield json.dumps(record, sort_keys=True)

    _atomic_write_lines(path, lines())


# ---------------------------------------------------------------------------
# candidates file

def load_candidates(path: str | Path) -> dict[str, CandidateSet]:
    """Load candidates.jsonl into a mapping image_id -> CandidateSet."""
    out: dict[str, CandidateSet] = {}
    for locus, record in _read_records(path, "candidates"):
        image_id = _require_str(record, "image_id", locus)
        if image_id in out:
            raise SchemaError(f"duplicate image_id {image_id!r}", locus=locus)
        raw_cands = record.get("candidates")
        if not isinstance(raw_cands, list):
            raise SchemaError("field 'candidates' must be a list", locus=locus)
        candidates = []
        for raw in raw_cands:
            if not isinstance(raw, dict):
                raise SchemaError("candidate entries must be JSON objects", locus=locus)
            candidate_id = _require_str(raw, "candidate_id", locus)
            label = raw.get("class")
            if not isinstance(label, str):
                raise SchemaError(
                    f"candidate {candidate_id!r} must carry a 'class' string", locus=locus
                )
            mask = _binary_mask_from_json(raw.get("mask"), locus=locus)
            candidates.append(Candidate(candidate_id=candidate_id, label=label, mask=mask))
        raw_per_ref = record.get("per_reference")
        if not isinstance(raw_per_ref, dict):
            raise SchemaError("field 'per_reference' must be an object", locus=locus)
        per_reference: dict[str, tuple[str, ...]] = {}
        for ref_id, cand_ids in raw_per_ref.items():
            if not isinstance(cand_ids, list) or not all(isinstance(c, str) for c in cand_ids):
                raise SchemaError(
                    f"per_reference[{ref_id!r}] must be a list of candidate ids", locus=locus
                )
            per_reference[ref_id] = tuple(cand_ids)
        try:
            out[image_id] = CandidateSet(
                image_id=image_id, candidates=tuple(candidates), per_reference=per_reference
            )
        except SchemaError as exc:
            raise SchemaError(str(exc), locus=locus) from None
    return out


def save_candidates(candidate_sets: Mapping[str, CandidateSet], path: str | Path) -> None:
    def lines():
        yield _header("candidates")
        for image_id in sorted(candidate_sets):
            cs = candidate_sets[image_id]
            yield json.dumps(
                {
                    "image_id": cs.image_id,
                    "candidates": [
                        {
                            "candidate_id": c.candidate_id,
                            "class": c.label,
                            "mask": mask_to_json(c.mask),
                        }
                        for c in cs.candidates
                    ],
                    "per_reference": {
                        ref_id: list(cands)
                        for ref_id, cands in sorted(cs.per_reference.items())
                    },
                },
                sort_keys=True,
            )

    _atomic_write_lines(path, lines())


# ---------------------------------------------------------------------------
# embeddings file

def _vector_from_json(record: dict, locus: str) -> np.ndarray:
    dim = record.get("dim")
    if not isinstance(dim, int) or dim <= 0:
        raise SchemaError("field 'dim' must be a positive integer", locus=locus)
    data = record.get("data")
    if isinstance(data, list):
        try:
            vec = np.asarray(data, dtype=np.float64)
        except (TypeError, ValueError):
            raise SchemaError("float-array 'data' must hold numbers", locus=locus) from None
    elif isinstance(data, str):
        try:
            raw = base64.b64decode(data, validate=True)
        except Exception as exc:
            raise SchemaError(f"invalid base64 data: {exc}", locus=locus) from None
        vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise SchemaError("field 'data' must be base64 or a float array", locus=locus)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise SchemaError(f"embedding holds {vec.size} values, expected dim={dim}", locus=locus)
    if not np.all(np.isfinite(vec)):
        raise SchemaError("embedding contains NaN or Inf", locus=locus)
    return vec


def load_embeddings(path: str | Path) -> EmbeddingTable:
    table: EmbeddingTable | None = None
    for locus, record in _read_records(path, "embeddings"):
        kind = record.get("kind")
        if kind not in ("text", "label", "prompted_image"):
            raise SchemaError(f"unknown embedding kind {kind!r}", locus=locus)
        vec = _vector_from_json(record, locus)
        if table is None:
            table = EmbeddingTable(dim=vec.shape[0])
        key = record.get("key")
        if kind == "prompted_image":
            if (not isinstance(key, list) or len(key) != 2
                    or not all(isinstance(k, str) for k in key)):
                raise SchemaError(
                    "prompted_image key must be [image_id, candidate_id]", locus=locus
                )
            key = (key[0], key[1])
        elif not isinstance(key, str):
            raise SchemaError(f"{kind} key must be a string", locus=locus)
        try:
            table.add(kind, key, vec)
        except SchemaError as exc:
            raise SchemaError(str(exc), locus=locus) from None
    if table is None:
        raise SchemaError(f"{path}: embeddings file holds no records")
    return table


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    def encode(vec: np.ndarray) -> str:
        return base64.b64encode(vec.astype("<f4").tobytes()).decode("ascii")

    def lines():
        yield _header("embeddings")
        for key in sorted(table.text):
            yield json.dumps({"kind": "text", "key": key, "dim": table.dim,
                              "data": encode(table.text[key])})
        for key in sorted(table.label):
            yield json.dumps({"kind": "label", "key": key, "dim": table.dim,
                              "data": encode(table.label[key])})
        for key in sorted(table.prompted_image):
            yield json.dumps({"kind": "prompted_image", "key": list(key), "dim": table.dim,
                              "data": encode(table.prompted_image[key])})

    _atomic_write_lines(path, lines())


# ---------------------------------------------------------------------------
# scores / selections / predictions / ground truth / assignments

def load_scores(path: str | Path) -> dict[tuple[str, str], float]:
    scores: dict[tuple[str, str], float] = {}
    for locus, record in _read_records(path, "scores"):
        ref_id = _require_str(record, "ref_id", locus)
        candidate_id = _require_str(record, "candidate_id", locus)
        score = record.get("score")
        if not isinstance(score, (int, float)) or not np.isfinite(score):
            raise SchemaError("field 'score' must be a finite number", locus=locus)
        key = (ref_id, candidate_id)
        if key in scores:
            raise SchemaError(f"duplicate score for {key!r}", locus=locus)
        scores[key] = float(score)
    return scores


def save_scores(scores: Mapping[tuple[str, str], float], path: str | Path) -> None:
    def lines():
        yield _header("scores")
        for (ref_id, candidate_id) in sorted(scores):
            yield json.dumps({"ref_id": ref_id, "candidate_id": candidate_id,
                              "score": scores[(ref_id, candidate_id)]})

    _atomic_write_lines(path, lines())


def load_selections(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for locus, record in _read_records(path, "selections"):
        ref_id = _require_str(record, "ref_id", locus)
        if ref_id in out:
            raise SchemaError(f"duplicate selection for ref {ref_id!r}", locus=locus)
        out[ref_id] = _require_str(record, "candidate_id", locus)
    return out


def save_selections(selection: Mapping[str, str], path: str | Path) -> None:
    def lines():
        yield _header("selections")
        for ref_id in sorted(selection):
            yield json.dumps({"ref_id": ref_id, "candidate_id": selection[ref_id]})

    _atomic_write_lines(path, lines())


def _load_ref_masks(path: str | Path, schema: str, binary_only: bool):
    out: dict[str, RleMask | SoftMask] = {}
    for locus, record in _read_records(path, schema):
        ref_id = _require_str(record, "ref_id", locus)
        if ref_id in out:
            raise SchemaError(f"duplicate mask for ref {ref_id!r}", locus=locus)
        if binary_only:
            out[ref_id] = _binary_mask_from_json(record.get("mask"), locus=locus)
        else:
            out[ref_id] = mask_from_json(record.get("mask"), locus=locus)
    return out


def load_predictions(path: str | Path) -> dict[str, RleMask | SoftMask]:
    return _load_ref_masks(path, "predictions", binary_only=False)


def save_predictions(predictions: Mapping[str, RleMask | SoftMask], path: str | Path) -> None:
    def lines():
        yield _header("predictions")
        for ref_id in sorted(predictions):
            yield json.dumps({"ref_id": ref_id, "mask": mask_to_json(predictions[ref_id])})

    _atomic_write_lines(path, lines())


def load_groundtruth(path: str | Path) -> dict[str, RleMask]:
    return _load_ref_masks(path, "groundtruth", binary_only=True)  # type: ignore[return-value]


def save_groundtruth(ground_truth: Mapping[str, RleMask], path: str | Path) -> None:
    def lines():
        yield _header("groundtruth")
        for ref_id in sorted(ground_truth):
            yield json.dumps({"ref_id": ref_id, "mask": mask_to_json(ground_truth[ref_id])})

    _atomic_write_lines(path, lines())


def load_assignments(path: str | Path) -> dict[str, dict[str, str | None]]:
    """image_id -> {object_id -> candidate_id or None}."""
    out: dict[str, dict[str, str | None]] = {}
    for locus, record in _read_records(path, "assignments"):
        image_id = _require_str(record, "image_id", locus)
        object_id = _require_str(record, "object_id", locus)
        candidate_id = record.get("candidate_id")
        if candidate_id is not None and not isinstance(candidate_id, str):
            raise SchemaError("field 'candidate_id' must be a string or null", locus=locus)
        per_image = out.setdefault(image_id, {})
        if object_id in per_image:
            raise SchemaError(f"duplicate assignment for object {object_id!r}", locus=locus)
        per_image[object_id] = candidate_id
    return out


def save_assignments(assignments: Mapping[str, Mapping[str, str | None]],
                     path: str | Path) -> None:
    def lines():
        yield _header("assignments")
        for image_id in sorted(assignments):
            for object_id in sorted(assignments[image_id]):
                yield json.dumps({
                    "image_id": image_id,
                    "object_id": object_id,
                    "candidate_id": assignments[image_id][object_id],
                })

    _atomic_write_lines(path, lines())


# ---------------------------------------------------------------------------
# dataset statistics and cross-file validation

@dataclass(frozen=True)
class DatasetStats:
    """Histogram of object instances per image, with the mean to 2 decimals.

    Instance-dense collections (several same-class objects per image) are
    where matching-based selection correction has the most room to help,
    so this mean is worth inspecting before training.
    """

    histogram: dict[int, int]
    mean: float
    n_images: int
    n_objects: int
    n_references: int

    def to_dict(self) -> dict:
        return {
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "mean_objects_per_image": self.mean,
            "images": self.n_images,
            "objects": self.n_objects,
            "references": self.n_references,
        }


def objects_per_image_stats(dataset: ReferringDataset) -> DatasetStats:
    if not dataset.images:
        raise RefmatchError("cannot compute statistics of an empty dataset")
    histogram: dict[int, int] = {}
    for image in dataset.images:
        n = len(image.objects)
        histogram[n] = histogram.get(n, 0) + 1
    mean = round(dataset.n_objects / dataset.n_images, 2)
    return DatasetStats(
        histogram=histogram,
        mean=mean,
        n_images=dataset.n_images,
        n_objects=dataset.n_objects,
        n_references=dataset.n_references,
    )


@dataclass(frozen=True)
class Finding:
    """One validation finding. kind is a stable machine-readable slug."""

    kind: str
    message: str


def validate_candidates(dataset: ReferringDataset,
                        candidate_sets: Mapping[str, CandidateSet]) -> list[Finding]:
    """Cross-check a dataset against its candidate sets, report-style.

    Flags references without candidates, candidate masks whose dimensions
    disagree within an image, dangling ids, and image-universe mismatches.
    Never raises for content problems; an empty list means fully consistent.
    """
    findings: list[Finding] = []
    dataset_images = {img.image_id for img in dataset.images}
    for image_id in sorted(set(candidate_sets) - dataset_images):
        findings.append(Finding("unknown_image",
                                f"candidates given for unknown image {image_id!r}"))
    for image in dataset.images:
        cs = candidate_sets.get(image.image_id)
        if cs is None:
            findings.append(Finding("missing_image",
                                    f"no candidates for image {image.image_id!r}"))
            continue
        dims = {(c.mask.height, c.mask.width) for c in cs.candidates}
        if len(dims) > 1:
            findings.append(Finding(
                "dimension_mismatch",
                f"image {image.image_id!r} has candidate masks of differing sizes: "
                f"{sorted(dims)}",
            ))
        ref_ids = {ref.ref_id for _, ref in image.references()}
        for ref_id in sorted(set(cs.per_reference) - ref_ids):
            findings.append(Finding(
                "unknown_reference",
                f"per_reference entry for unknown ref {ref_id!r} in image {image.image_id!r}",
            ))
        for ref_id in sorted(ref_ids):
            cand_ids = cs.per_reference.get(ref_id)
            if not cand_ids:
                findings.append(Finding(
                    "zero_candidates",
                    f"reference {ref_id!r} in image {image.image_id!r} has no candidates",
                ))
    return findings


# ---------------------------------------------------------------------------
# image files (8-bit PNG / PPM only)

_IMAGE_SUFFIXES = {".png", ".ppm"}


def load_image(path: str | Path) -> ImageBuffer:
    """Read an 8-bit PNG or PPM file into an ImageBuffer."""
    from PIL import Image

    path = Path(path)
    if path.suffix.lower() not in _IMAGE_SUFFIXES:
        raise RefmatchError(f"unsupported image format {path.suffix!r} (use .png or .ppm)")
    if not path.exists():
        raise RefmatchError(f"image file not found: {path}")
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def save_image(image: ImageBuffer, path: str | Path) -> None:
    """Write an ImageBuffer as 8-bit PNG or PPM, chosen by extension."""
    from PIL import Image

    path = Path(path)
    if path.suffix.lower() not in _IMAGE_SUFFIXES:
        raise RefmatchError(f"unsupported image format {path.suffix!r} (use .png or .ppm)")
    arr = np.clip(np.rint(image.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
