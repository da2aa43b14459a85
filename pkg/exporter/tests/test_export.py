"""End-to-end export integration: the 10-image mini fixture must produce
files the downstream toolkit accepts verbatim (zero validation findings),
with scores the toolkit can recompute from the embeddings to 1e-5."""

import json
import subprocess
import sys

import numpy as np
import pytest

from refmatch_exporter import ExportJob, export_candidates, export_embeddings
from refmatch_exporter.synthetic import write_fixture

VOCAB = ("square", "rectangle", "ellipse")


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    fixture = write_fixture(root, n_images=10, seed=0)
    job = ExportJob(
        dataset_path=root / "dataset.jsonl",
        image_dir=root / "images",
        vocabulary=VOCAB,
        out_dir=root / "export",
    )
    cand = export_candidates(job)
    emb = export_embeddings(job)
    return {"root": root, "job": job, **fixture, **cand, **emb}


def _run_primary(*args):
    return subprocess.run([sys.executable, "-m", "refmatch.cli", *args],
                          capture_output=True, text=True)


def test_schema_validation_zero_findings(exported, tmp_path):
    report_path = tmp_path / "validation.json"
    proc = _run_primary("validate",
                        "--dataset", exported["dataset"],
                        "--candidates", exported["candidates"],
                        "--out", str(report_path))
    assert proc.returncode == 0, proc.stderr
    report = json.loads(report_path.read_text())
    assert report["count"] == 0, report


def test_no_empty_detections_on_fixture(exported):
    assert exported["empty_detections"] == []


def test_scores_equal_primary_cosine_recomputation(exported):
    from refmatch import load_candidates, load_embeddings, load_scores
    from refmatch.selection import cosine_similarity

    scores = load_scores(exported["scores"])
    table = load_embeddings(exported["embeddings"])
    candidate_sets = load_candidates(exported["candidates"])
    assert scores, "exporter emitted no scores"
    checked = 0
    for cs in candidate_sets.values():
        for ref_id, cand_ids in cs.per_reference.items():
            for cand_id in cand_ids:
                recomputed = cosine_similarity(
                    table.text[ref_id], table.prompted_image[(cs.image_id, cand_id)])
                assert abs(scores[(ref_id, cand_id)] - recomputed) < 1e-5
                checked += 1
    assert checked == len(scores)


def test_primary_select_consumes_export(exported, tmp_path):
    sel_scores = tmp_path / "sel_scores.jsonl"
    sel_emb = tmp_path / "sel_emb.jsonl"
    proc = _run_primary("select",
                        "--dataset", exported["dataset"],
                        "--candidates", exported["candidates"],
                        "--scores", exported["scores"],
                        "--out", str(sel_scores))
    assert proc.returncode == 0, proc.stderr
    proc = _run_primary("select",
                        "--dataset", exported["dataset"],
                        "--candidates", exported["candidates"],
                        "--embeddings", exported["embeddings"],
                        "--out", str(sel_emb))
    assert proc.returncode == 0, proc.stderr
    assert sel_scores.read_bytes() == sel_emb.read_bytes()


def test_projections_audit_file(exported):
    lines = [json.loads(l) for l in
             open(exported["projections"], encoding="utf-8").read().splitlines()]
    assert lines[0] == {"schema": "projections", "version": 1}
    body = lines[1:]
    assert body and all({"ref_id", "phrase", "label"} <= set(r) for r in body)
    assert all(r["label"] in VOCAB for r in body)


def test_export_is_deterministic(exported, tmp_path):
    job = ExportJob(
        dataset_path=exported["job"].dataset_path,
        image_dir=exported["job"].image_dir,
        vocabulary=VOCAB,
        out_dir=tmp_path / "again",
    )
    export_candidates(job)
    export_embeddings(job)
    for name in ("candidates.jsonl", "embeddings.jsonl", "scores.jsonl"):
        first = (exported["root"] / "export" / name).read_bytes()
        second = (tmp_path / "again" / name).read_bytes()
        assert first == second


def test_candidate_masks_match_drawn_objects(exported):
    from refmatch import iou, load_candidates, load_groundtruth

    candidate_sets = load_candidates(exported["candidates"])
    ground_truth = load_groundtruth(exported["groundtruth"])
    matched = 0
    for cs in candidate_sets.values():
        for ref_id, cand_ids in cs.per_reference.items():
            best = max(iou(cs.candidate(c).mask, ground_truth[ref_id])
                       for c in cand_ids)
            assert best > 0.9
            matched += 1
    assert matched == len(ground_truth)


def test_empty_detections_are_recorded(tmp_path):
    import numpy as np
    from refmatch_exporter.imaging import save_image

    image_dir = tmp_path / "images"
    image_dir.mkdir()
    save_image(np.full((32, 32, 3), 0.8), image_dir / "blank.png")  # nothing to find
    dataset = tmp_path / "dataset.jsonl"
    dataset.write_text("\n".join([
        json.dumps({"schema": "dataset", "version": 1}),
        json.dumps({"image_id": "blank", "image_path": "images/blank.png",
                    "objects": [{"object_id": "o0", "references":
                                 [{"ref_id": "r0", "text": "the red square"}]}]}),
    ]) + "\n")
    job = ExportJob(dataset_path=dataset, image_dir=image_dir,
                    vocabulary=VOCAB, out_dir=tmp_path / "out")
    result = export_candidates(job)
    assert result["empty_detections"] == [("blank", "square")]
    record = json.loads(
        (tmp_path / "out" / "candidates.jsonl").read_text().splitlines()[1])
    assert record["per_reference"]["r0"] == []


def test_exporter_cli_round_trip(tmp_path):
    fixture_dir = tmp_path / "fx"
    proc = subprocess.run(
        [sys.executable, "-m", "refmatch_exporter.cli", "fixture",
         "--out-dir", str(fixture_dir), "--images-count", "3", "--seed", "1"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    out_dir = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "refmatch_exporter.cli", "candidates",
         "--dataset", str(fixture_dir / "dataset.jsonl"),
         "--images", str(fixture_dir / "images"),
         "--vocab", ",".join(VOCAB), "--out-dir", str(out_dir)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(
        [sys.executable, "-m", "refmatch_exporter.cli", "embeddings",
         "--dataset", str(fixture_dir / "dataset.jsonl"),
         "--images", str(fixture_dir / "images"),
         "--vocab", ",".join(VOCAB), "--out-dir", str(out_dir)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out_dir / "scores.jsonl").exists()
