"""Training, inference, evaluation, noise sweep and connectivity analysis."""

from sstdunet.pipeline.config import DataConfig, FcConfig, RunConfig, TrainConfig, load_config
from sstdunet.pipeline.data import Sample, SplitPlan, load_sample, make_splits, prepare_image, prepare_mask
from sstdunet.pipeline.fc import FcResult, GroupMap, fc_analysis, group_t_map, roi_time_series
from sstdunet.pipeline.infer import (
    DEFAULT_NOISE_LEVELS,
    EvalSubject,
    Prediction,
    compare_reports,
    evaluate,
    evaluate_masks,
    noise_sweep,
    predict,
    sweep_summary,
    trend_inversions,
)
from sstdunet.pipeline.optim import AdamWConfig, AdamWState, Schedule, adamw_step, lr_at
from sstdunet.pipeline.train import TrainResult, hard_dice, mean_dice, train, train_repeats

__all__ = [
    "DataConfig", "FcConfig", "RunConfig", "TrainConfig", "load_config", "Sample", "SplitPlan", "load_sample",
    "make_splits", "prepare_image", "prepare_mask", "FcResult", "GroupMap", "fc_analysis", "group_t_map",
    "roi_time_series", "DEFAULT_NOISE_LEVELS", "EvalSubject", "Prediction", "compare_reports", "evaluate",
    "evaluate_masks", "noise_sweep", "predict", "sweep_summary", "trend_inversions", "AdamWConfig",
    "AdamWState", "Schedule", "adamw_step", "lr_at", "TrainResult", "hard_dice", "mean_dice", "train",
    "train_repeats",
]
