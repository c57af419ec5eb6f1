"""Registration metrics and experiment reports."""

from .core import (LandmarkSet, LandmarkWarning, MetricError, failed, hull_excess, idw_interpolate, med, pearson,
                   prd, rms_error, rmse, spearman, tre, tre_from_displacements, visibility)
from .reports import (DEFAULT_PRD_BINS_MM, DEFAULT_VISIBILITY_BINS, SampleMetrics, deformation_level_report,
                      evaluate_sample, noise_sweep_report, read_table, visibility_sweep_report, write_json,
                      write_table)

__all__ = [
    "DEFAULT_PRD_BINS_MM", "DEFAULT_VISIBILITY_BINS", "LandmarkSet", "LandmarkWarning", "MetricError",
    "SampleMetrics", "deformation_level_report", "evaluate_sample", "failed", "hull_excess", "idw_interpolate",
    "med", "noise_sweep_report", "pearson", "prd", "read_table", "rms_error", "rmse", "spearman", "tre",
    "tre_from_displacements", "visibility", "visibility_sweep_report", "write_json", "write_table",
]
