"""Splitting, training, evaluation and repeated-run statistics."""

from .splits import SplitSpec, kfold_indices, split_indices, stratified_split
from .stats import (
    RunStats, StatComparison, TTest, betainc, cohens_d, cohens_d_samples, compare, compare_all,
    confidence_interval, pooled_t, t_cdf, t_two_sided_p, welch_from_stats, welch_t,
)
from .study import RunRecord, StudyResult, repeat_runs, run_splits, run_study
from .training import (
    Confusion, EpochRecord, GridCell, Metrics, TrainResult, evaluate, fit_model, grid_search,
    metrics_from_predictions, train_loop,
)
