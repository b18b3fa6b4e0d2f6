"""Behavioral evaluation of trajectory-prediction models against
naturalistic highway recordings."""

from .core import (
    AnalysisConfig,
    BBError,
    ConfigError,
    DataError,
    Dataset,
    LaneRole,
    PredictionSet,
    SiteProfile,
    VehicleTrack,
)
from .metrics import (
    SOURCE_NATURALISTIC,
    TrajectorySource,
    courtesy_lc_table,
    evaluate_behavior,
    highway_lc_curve,
    model_tag,
    pass_first_curve,
    rmse_by_horizon,
)
from .report import TOOL_VERSION, report_digest, summarize, write_report
from .stats import Table2x2, bin_probability, fisher_exact_two_sided, r_squared
from .synth import SynthParams

__version__ = TOOL_VERSION

__all__ = [
    "AnalysisConfig",
    "BBError",
    "ConfigError",
    "DataError",
    "Dataset",
    "LaneRole",
    "PredictionSet",
    "SiteProfile",
    "SOURCE_NATURALISTIC",
    "SynthParams",
    "Table2x2",
    "TrajectorySource",
    "VehicleTrack",
    "bin_probability",
    "courtesy_lc_table",
    "evaluate_behavior",
    "fisher_exact_two_sided",
    "highway_lc_curve",
    "model_tag",
    "pass_first_curve",
    "r_squared",
    "report_digest",
    "rmse_by_horizon",
    "summarize",
    "write_report",
    "__version__",
]
