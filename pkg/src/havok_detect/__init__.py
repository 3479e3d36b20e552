"""Model-free event detection on noisy univariate series via delay embedding,
SVD modes, a forced linear propagator and a self-calibrated threshold."""

from .series import (FeatureBank, NumericalError, PipelineConfig, TimeSeries, ValidationError,
                     validate)
from .detector import DetectionReport, Event, extract_events, run_pipeline

__all__ = [
    "FeatureBank", "NumericalError", "PipelineConfig", "TimeSeries", "ValidationError",
    "validate", "DetectionReport", "Event", "extract_events", "run_pipeline",
]
__version__ = "0.1.0"
