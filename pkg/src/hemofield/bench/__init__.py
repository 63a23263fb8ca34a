"""Training, vFFR reconstruction, evaluation statistics and feature ablations."""

from .ablation import default_masks, run_ablation
from .evaluate import evaluate, write_report
from .lesions import LesionRecord, lesion_min_vffr
from .metrics import approx_disparity, bland_altman, confusion_at_threshold, per_point_diff, spearman_rho
from .targets import TARGETS, reconstruct_vffr, vffr_from_target
from .train import TrainedModel, TrainingAborted, TrainRun, load_trained, predict_vffr, train

__all__ = [
    "LesionRecord", "TARGETS", "TrainRun", "TrainedModel", "TrainingAborted", "approx_disparity", "bland_altman",
    "confusion_at_threshold", "default_masks", "evaluate", "lesion_min_vffr", "load_trained", "per_point_diff",
    "predict_vffr", "reconstruct_vffr", "run_ablation", "spearman_rho", "train", "vffr_from_target", "write_report",
]
