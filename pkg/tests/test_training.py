import math

import numpy as np
import pytest

from refmatch import (MatchUniverse, RefmatchError, TrainConfig, check_feasible,
                      correct_train, evaluate, fig5_scenario, iou, new_model,
                      pretrain, random_scenario, rle_encode, run_experiment)


def _binarized(model, ref_id):
    return rle_encode((model.prediction(ref_id).values >= 0.5).astype(int))


def _mean_bce(model, targets):
    total = 0.0
    for ref_id, target in targets.items():
        p = np.clip(model.prediction(ref_id).values, 1e-7, 1 - 1e-7)
        total += float(-(target * np.log(p) + (1 - target) * np.log(1 - p)).mean())
    return total / len(targets)


def test_config_validation():
    with pytest.raises(RefmatchError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(RefmatchError):
        TrainConfig(pretrain_steps=-1)
    with pytest.raises(RefmatchError):
        TrainConfig(gamma=-2.0)
    TrainConfig(pretrain_steps=0, correct_steps=0)  # zero steps are legal


def test_pretrain_zero_steps_is_identity():
    s = fig5_scenario()
    model = new_model(s.dataset, s.candidates)
    out = pretrain(model, s.selection, s.dataset, s.candidates,
                   TrainConfig(pretrain_steps=0))
    for ref_id in model.logits:
        assert np.array_equal(out.logits[ref_id], model.logits[ref_id])


def test_pretrain_converges_to_selection():
    s = fig5_scenario()
    model = new_model(s.dataset, s.candidates)
    trained = pretrain(model, s.selection, s.dataset, s.candidates, TrainConfig())
    mask_a = s.candidates["img0"].candidate("a").mask
    for ref_id in ("ref0", "ref1", "ref2", "ref3"):
        assert iou(_binarized(trained, ref_id), mask_a) > 0.95
    # same selection -> identical predictions for refs of one object
    assert np.array_equal(trained.logits["ref0"], trained.logits["ref1"])


def test_pretrain_decreases_bce():
    from refmatch.training import _selected_targets
    s = fig5_scenario()
    model = new_model(s.dataset, s.candidates)
    targets = _selected_targets(model, s.selection, s.dataset, s.candidates)
    trained = pretrain(model, s.selection, s.dataset, s.candidates,
                       TrainConfig(pretrain_steps=50))
    assert _mean_bce(trained, targets) < _mean_bce(model, targets)


def test_pretrain_loss_monotone_at_small_rate():
    from refmatch.training import _selected_targets
    s = fig5_scenario()
    model = new_model(s.dataset, s.candidates)
    targets = _selected_targets(model, s.selection, s.dataset, s.candidates)
    cfg = TrainConfig(pretrain_steps=1, learning_rate=0.1)
    losses = [_mean_bce(model, targets)]
    for _ in range(60):
        model = pretrain(model, s.selection, s.dataset, s.candidates, cfg)
        losses.append(_mean_bce(model, targets))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_pretrain_missing_selection_errors():
    s = fig5_scenario()
    model = new_model(s.dataset, s.candidates)
    partial = {k: v for k, v in s.selection.items() if k != "ref3"}
    with pytest.raises(RefmatchError, match="ref3"):
        pretrain(model, partial, s.dataset, s.candidates, TrainConfig())


# ---------------------------------------------------------------------------
# correction dynamics

def test_fig5_correction():
    s = fig5_scenario()
    cfg = TrainConfig()
    model = new_model(s.dataset, s.candidates)
    pre = pretrain(model, s.selection, s.dataset, s.candidates, cfg)
    corrected, trace = correct_train(pre, s.dataset, s.candidates, cfg)
    for ref_id, gt in s.ground_truth.items():
        assert iou(_binarized(corrected, ref_id), gt) >= 0.9
    # ablation keeps the mis-selected object wrong
    ablation = pretrain(pre, s.selection, s.dataset, s.candidates, cfg)
    assert iou(_binarized(ablation, "ref2"), s.ground_truth["ref2"]) < 0.5
    assert iou(_binarized(ablation, "ref3"), s.ground_truth["ref3"]) < 0.5


def test_trace_assignments_always_feasible():
    s = fig5_scenario()
    cfg = TrainConfig(correct_steps=25)
    pre = pretrain(new_model(s.dataset, s.candidates), s.selection,
                   s.dataset, s.candidates, cfg)
    _, trace = correct_train(pre, s.dataset, s.candidates, cfg)
    image = s.dataset.images[0]
    universe = MatchUniverse.from_image(image, s.candidates["img0"])
    assert len(trace) == 25
    for step in trace:
        assert check_feasible(step.assignments["img0"], universe) == []


def test_correct_selection_keeps_assignment_constant():
    s = fig5_scenario()
    correct = {"ref0": "a", "ref1": "a", "ref2": "b", "ref3": "b"}
    cfg = TrainConfig(correct_steps=40)
    pre = pretrain(new_model(s.dataset, s.candidates), correct,
                   s.dataset, s.candidates, cfg)
    _, trace = correct_train(pre, s.dataset, s.candidates, cfg)
    first = trace[0].assignments["img0"]
    assert first.matched == {"obj0": "a", "obj1": "b"}
    assert all(step.assignments["img0"] == first for step in trace)


def test_matched_ce_non_increasing_under_stable_assignment():
    s = fig5_scenario()
    cfg = TrainConfig(correct_steps=80, learning_rate=0.05)
    pre = pretrain(new_model(s.dataset, s.candidates), s.selection,
                   s.dataset, s.candidates, TrainConfig())
    _, trace = correct_train(pre, s.dataset, s.candidates, cfg)
    for prev, cur in zip(trace, trace[1:]):
        if prev.assignments == cur.assignments:
            assert cur.matched_ce <= prev.matched_ce + 1e-9


def test_determinism_identical_traces():
    s = random_scenario(n_images=2, seed=5)
    cfg = TrainConfig(correct_steps=30)
    pre = pretrain(new_model(s.dataset, s.candidates), s.selection,
                   s.dataset, s.candidates, cfg)
    out1, trace1 = correct_train(pre, s.dataset, s.candidates, cfg)
    out2, trace2 = correct_train(pre, s.dataset, s.candidates, cfg)
    assert trace1 == trace2
    for ref_id in out1.logits:
        assert np.array_equal(out1.logits[ref_id], out2.logits[ref_id])


def test_contrastive_term_runs_in_training():
    s = fig5_scenario()
    cfg = TrainConfig(correct_steps=10, gamma=5.0)
    pre = pretrain(new_model(s.dataset, s.candidates), s.selection,
                   s.dataset, s.candidates, TrainConfig(pretrain_steps=50))
    _, trace = correct_train(pre, s.dataset, s.candidates, cfg)
    assert all(step.contrastive is not None for step in trace)
    assert all(np.isfinite(step.contrastive) for step in trace)


# ---------------------------------------------------------------------------
# experiment driver

def test_experiment_ordering_on_benchmark():
    s = random_scenario(n_images=6, n_objects=3, n_candidates=6, seed=2)
    report = run_experiment(s.dataset, s.candidates, s.selection, s.ground_truth,
                            TrainConfig(seed=2))
    assert report.corrected.miou > report.ablation.miou >= report.pretrained.miou


def test_experiment_deterministic_reports():
    s = random_scenario(n_images=2, seed=3)
    cfg = TrainConfig(pretrain_steps=60, correct_steps=60, seed=3)
    a = run_experiment(s.dataset, s.candidates, s.selection, s.ground_truth, cfg)
    b = run_experiment(s.dataset, s.candidates, s.selection, s.ground_truth, cfg)
    assert a.to_dict() == b.to_dict()


def test_single_object_correction_equals_ablation():
    # one object, one candidate: matching has no freedom
    s = random_scenario(n_images=3, n_objects=1, n_candidates=1, seed=7)
    report = run_experiment(s.dataset, s.candidates, s.selection, s.ground_truth,
                            TrainConfig(seed=7))
    assert report.corrected.miou == report.ablation.miou
    assert report.corrected.per_reference == report.ablation.per_reference


def test_scenario_reproducible_under_seed():
    a = random_scenario(seed=11)
    b = random_scenario(seed=11)
    assert a.dataset == b.dataset
    assert a.selection == b.selection
    assert a.candidates.keys() == b.candidates.keys()
    assert all(a.candidates[k] == b.candidates[k] for k in a.candidates)
