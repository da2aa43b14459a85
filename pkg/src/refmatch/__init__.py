"""Weakly-supervised referring image segmentation tooling.

Candidate masks, referring expressions, embeddings, and predictions move
through plain JSONL files; this package selects candidate masks per
expression from precomputed embeddings, corrects selections with
constrained greedy matching during training, and scores results with
oIoU/mIoU. Heavy vision-language models stay outside, behind the file
formats.
"""

from .data import (Candidate, CandidateSet, DatasetStats, EmbeddingTable, Finding,
                   ImageRecord, ObjectRecord, Reference, ReferringDataset,
                   load_candidates, load_dataset, load_embeddings, load_groundtruth,
                   load_predictions, load_scores, load_selections,
                   objects_per_image_stats, save_candidates, save_dataset,
                   save_embeddings, save_groundtruth, save_predictions, save_scores,
                   save_selections, validate_candidates)
from .errors import GeometryError, RefmatchError, SchemaError
from .evaluation import MetricsReport, compare_reports, evaluate
from .masks import (ImageBuffer, RleMask, SoftMask, gaussian_blur, iou,
                    reverse_blur_prompt, rle_decode, rle_encode, soft_iou,
                    soft_iou_grad)
from .matching import (Assignment, MatchUniverse, Violation, active_pixels,
                       assignment_objective, brute_force_match, check_feasible,
                       compute_match_scores, contrastive_loss, contrastive_loss_grad,
                       greedy_match, matched_ce_loss)
from .selection import (cosine_similarity, greedy_select_by_similarity, oracle_select,
                        project_class, random_select, scores_from_embeddings,
                        zero_shot_select)
from .training import (ExperimentReport, Scenario, ToyModel, TrainConfig, TraceStep,
                       correct_train, fig5_scenario, new_model, pretrain,
                       random_scenario, run_experiment)

__version__ = "0.1.0"
