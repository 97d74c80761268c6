"""Segmentation scores and the statistics used for connectivity analysis."""

from sstdunet.metrics.segmentation import (
    COLUMNS,
    MetricsReport,
    SegScores,
    directed_hausdorff,
    hausdorff,
    read_report_csv,
    seg_metrics,
)
from sstdunet.metrics.stats import (
    LinearFit,
    StatResult,
    betainc,
    correlation_matrix,
    fdr_bh,
    fisher_z,
    linear_fit,
    pearson,
    t_cdf,
    t_sf,
    t_test,
    t_test_columns,
)

__all__ = [
    "COLUMNS", "MetricsReport", "SegScores", "directed_hausdorff", "hausdorff", "read_report_csv",
    "seg_metrics", "LinearFit", "StatResult", "betainc", "correlation_matrix", "fdr_bh", "fisher_z",
    "linear_fit", "pearson", "t_cdf", "t_sf", "t_test", "t_test_columns",
]
