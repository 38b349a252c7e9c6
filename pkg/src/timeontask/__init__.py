"""Time-on-task estimation from click timestamps with log-normal mixtures."""

from .errors import ConfigurationError, EstimationError, InsufficientData, TimeOnTaskError
from .estimate import TimeOnTaskEstimate, net_time, time_on_task, time_on_task_excluding_fast
from .ingest import (
    ClickEvent,
    FilterConfig,
    IntervalSeries,
    ResourceCategory,
    categorize_interval,
    extract_intervals,
    parse_track_log,
)
from .mixture import EmConfig, MixtureFit, MixtureParams, fit_em, goodness_of_fit, select_model
from .threshold import (
    BELOW_SUPPORT,
    ThresholdSolution,
    aggregate_thresholds,
    effective_threshold,
    thresholded_estimate,
)

__all__ = [
    "BELOW_SUPPORT",
    "ClickEvent",
    "ConfigurationError",
    "EmConfig",
    "EstimationError",
    "FilterConfig",
    "InsufficientData",
    "IntervalSeries",
    "MixtureFit",
    "MixtureParams",
    "ResourceCategory",
    "ThresholdSolution",
    "TimeOnTaskError",
    "TimeOnTaskEstimate",
    "aggregate_thresholds",
    "categorize_interval",
    "effective_threshold",
    "extract_intervals",
    "fit_em",
    "goodness_of_fit",
    "net_time",
    "parse_track_log",
    "select_model",
    "thresholded_estimate",
    "time_on_task",
    "time_on_task_excluding_fast",
]
