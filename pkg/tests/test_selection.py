import numpy as np
import pytest
from scipy import stats

from refmatch import (RefmatchError, cosine_similarity, greedy_select_by_similarity,
                      oracle_select, project_class, random_select, zero_shot_select)

from conftest import rect_mask, tiny_candidates, tiny_dataset


# ---------------------------------------------------------------------------
# cosine similarity

def test_cosine_self():
    v = np.array([0.3, -2.0, 1.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0)


def test_cosine_orthogonal():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_hand_case():
    assert cosine_similarity(np.array([1.0, 2.0]), np.array([2.0, 1.0])) == pytest.approx(0.8)


def test_cosine_zero_norm_errors():
    with pytest.raises(RefmatchError, match="zero-norm"):
        cosine_similarity(np.zeros(2), np.ones(2))


# ---------------------------------------------------------------------------
# class projection

def test_project_exact_match():
    labels = {"cat": np.array([1.0, 0.0]), "dog": np.array([0.0, 1.0])}
    assert project_class(np.array([1.0, 0.0]), labels) == "cat"


def test_project_tie_goes_lexicographic():
    labels = {"zebra": np.array([1.0, 0.0]), "ape": np.array([1.0, 0.0])}
    assert project_class(np.array([2.0, 0.0]), labels) == "ape"


def test_project_matches_brute_force():
    rng = np.random.default_rng(9)
    for _ in range(25):
        labels = {f"l{i}": rng.normal(size=4) for i in range(3)}
        phrase = rng.normal(size=4)
        best = max(sorted(labels),
                   key=lambda lb: (cosine_similarity(phrase, labels[lb]),))
        # exhaustive comparison with stable tie order
        scores = {lb: cosine_similarity(phrase, labels[lb]) for lb in labels}
        expected = sorted(labels, key=lambda lb: (-scores[lb], lb))[0]
        assert project_class(phrase, labels) == expected == best


def test_project_empty_labels_errors():
    with pytest.raises(RefmatchError, match="empty"):
        project_class(np.ones(2), {})


# ---------------------------------------------------------------------------
# zero-shot selection

def test_zero_shot_single_candidate():
    assert zero_shot_select({("r0", "a"): 0.1}, {"r0": ("a",)}) == {"r0": "a"}


def test_zero_shot_picks_max():
    scores = {("r0", "a"): 0.2, ("r0", "b"): 0.9, ("r0", "c"): 0.5}
    assert zero_shot_select(scores, {"r0": ("a", "b", "c")}) == {"r0": "b"}


def test_zero_shot_tie_rule():
    scores = {("r0", "a"): 0.5, ("r0", "b"): 0.5}
    assert zero_shot_select(scores, {"r0": ("a", "b")}) == {"r0": "a"}


def test_zero_show_missing_score_errors():
    with pytest.raises(RefmatchError, match="missing score"):
        zero_shot_select({("r0", "a"): 0.1}, {"r0": ("a", "b")})


def test_zero_shot_rescaling_invariance():
    rng = np.random.default_rng(2)
    per_ref = {"r0": ("a", "b", "c"), "r1": ("a", "b", "c")}
    scores = {(r, c): float(rng.random()) for r in per_ref for c in per_ref[r]}
    scaled = {k: 3.7 * v for k, v in scores.items()}
    assert zero_shot_select(scores, per_ref) == zero_shot_select(scaled, per_ref)


# ---------------------------------------------------------------------------
# random baseline

def test_random_single_candidate_any_seed():
    for seed in range(5):
        assert random_select({"r0": ("only",)}, seed) == {"r0": "only"}


def test_random_deterministic_under_seed():
    per_ref = {f"r{i}": ("a", "b", "c") for i in range(20)}
    assert random_select(per_ref, 123) == random_select(per_ref, 123)


def test_random_uniformity_chi_square():
    k = 4
    trials = 4000
    cand_ids = tuple(f"c{i}" for i in range(k))
    per_ref = {f"r{i:04d}": cand_ids for i in range(trials)}
    selection = random_select(per_ref, seed=17)
    counts = {c: 0 for c in cand_ids}
    for choice in selection.values():
        counts[choice] += 1
    _, p = stats.chisquare(list(counts.values()))
    assert p > 0.01


def test_random_empty_list_errors():
    with pytest.raises(RefmatchError, match="empty"):
        random_select({"r0": ()}, 0)


# ---------------------------------------------------------------------------
# oracle baseline

def test_oracle_picks_exact_gt():
    ds = tiny_dataset()
    cs = tiny_candidates()
    gt = {"obj0": cs.candidate("a").mask, "obj1": cs.candidate("b").mask}
    sel = oracle_select(ds.images[0], cs, gt)
    assert sel == {"r0": "a", "r1": "a", "r2": "b", "r3": "b"}


def test_oracle_picks_highest_iou():
    ds = tiny_dataset()
    cs = tiny_candidates()
    # ground truth overlaps candidate b more than candidate a
    gt_mask = rect_mask(8, 1, 4, 4, 3)
    sel = oracle_select(ds.images[0], cs, {"obj0": gt_mask, "obj1": gt_mask})
    assert sel["r0"] == "b"


def test_oracle_all_zero_iou_tie():
    ds = tiny_dataset()
    cs = tiny_candidates()
    gt_mask = rect_mask(8, 6, 0, 2, 8)  # disjoint from both candidates
    sel = oracle_select(ds.images[0], cs, {"obj0": gt_mask, "obj1": gt_mask})
    assert sel["r0"] == "a"  # lowest candidate id among equal zeros


def test_oracle_missing_gt_errors():
    ds = tiny_dataset()
    cs = tiny_candidates()
    with pytest.raises(RefmatchError, match="ground-truth"):
        oracle_select(ds.images[0], cs, {"obj0": cs.candidate("a").mask})


# ---------------------------------------------------------------------------
# similarity-driven constrained greedy

def test_greedy_sim_single_pair():
    ds = tiny_dataset()
    cs = tiny_candidates()
    scores = {(r, c): 0.5 for r in ("r0", "r1", "r2", "r3") for c in ("a", "b")}
    sel = greedy_select_by_similarity(scores, ds.images[0], cs)
    # ties: obj0 claims "a" first, exclusion forces obj1 onto "b"
    assert sel == {"r0": "a", "r1": "a", "r2": "b", "r3": "b"}


def test_greedy_sim_exclusion_forces_swap():
    ds = tiny_dataset()
    cs = tiny_candidates()
    scores = {
        ("r0", "a"): 0.9, ("r0", "b"): 0.8, ("r1", "a"): 0.9, ("r1", "b"): 0.8,
        ("r2", "a"): 0.85, ("r2", "b"): 0.1, ("r3", "a"): 0.85, ("r3", "b"): 0.1,
    }
    sel = greedy_select_by_similarity(scores, ds.images[0], cs)
    assert sel == {"r0": "a", "r1": "a", "r2": "b", "r3": "b"}


def test_greedy_sim_satisfies_constraints_on_random_instances():
    from refmatch import MatchUniverse, check_feasible
    ds = tiny_dataset()
    cs = tiny_candidates()
    universe = MatchUniverse.from_image(ds.images[0], cs)
    rng = np.random.default_rng(6)
    for _ in range(50):
        scores = {(r, c): float(rng.normal())
                  for r in ("r0", "r1", "r2", "r3") for c in ("a", "b")}
        sel = greedy_select_by_similarity(scores, ds.images[0], cs)
        assert check_feasible(sel, universe) == []
