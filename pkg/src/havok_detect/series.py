"""Core data types: sampled series, feature banks and the pipeline configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

Auto = str  # the literal "auto"
AUTO = "auto"

FEATURE_LABELS = ("raw", "convexity", "mean_shift", "energy_ratio")


class ValidationError(ValueError):
    """Bad input or impossible configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical stage failed or produced non-finite output (CLI exit code 3)."""


def _frozen_array(values, name: str = "samples") -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled real series; time of sample n is start_time + n * sample_period."""

    samples: np.ndarray
    sample_period: float = 1.0
    start_time: float = 0.0

    def __post_init__(self):
        arr = _frozen_array(self.samples)
        if arr.size < 2:
            raise ValidationError(f"a series needs at least 2 samples, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValidationError(f"non-finite sample at index {bad}")
        if not (np.isfinite(self.sample_period) and self.sample_period > 0):
            raise ValidationError(f"sample_period must be positive, got {self.sample_period}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_period", float(self.sample_period))
        object.__setattr__(self, "start_time", float(self.start_time))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(len(self))

    def with_samples(self, samples, start_time: Optional[float] = None) -> "TimeSeries":
        """New series sharing this one's sampling grid."""
        return TimeSeries(samples, self.sample_period,
                          self.start_time if start_time is None else start_time)


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Equal-length multivariate basis functions derived from one raw series."""

    features: tuple
    labels: tuple
    sector_halfwidth: int

    def __post_init__(self):
        feats = tuple(self.features)
        labels = tuple(self.labels)
        if not feats:
            raise ValidationError("a feature bank needs at least one feature")
        if len(labels) != len(feats):
            raise ValidationError("one label per feature required")
        n, ts = len(feats[0]), feats[0].sample_period
        for f in feats[1:]:
            if len(f) != n or f.sample_period != ts:
                raise ValidationError("all features must share length and sample_period")
        if int(self.sector_halfwidth) < 1:
            raise ValidationError("sector_halfwidth must be a positive integer")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sector_halfwidth", int(self.sector_halfwidth))

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_samples(self) -> int:
        return len(self.features[0])

    @property
    def sample_period(self) -> float:
        return self.features[0].sample_period

    def matrix(self) -> np.ndarray:
        """Features stacked as an (F, N) array."""
        return np.vstack([f.samples for f in self.features])


def _default_m_grid():
    return (2, 4, 8, 16, 20, 40, 80)


def _default_r_grid():
    return (2,)


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for :func:`havok_detect.detector.run_pipeline`.

    Numeric fields may be the string ``"auto"``; those are resolved by the
    detector (sector width from ``min_stimulus_interval``, ``(M, r)`` by grid
    search, histogram bins by the Freedman-Diaconis rule).
    """

    sector_halfwidth: Union[int, Auto] = AUTO
    memory_M: Union[int, Auto] = AUTO
    order_r: Union[int, Auto] = AUTO
    robust_median: bool = False
    matched_filter: Optional[np.ndarray] = field(default=None, compare=False)
    use_hilbert: bool = False
    min_event_separation: Optional[int] = None  # None -> sector_halfwidth
    histogram_bins: Union[int, Auto] = AUTO
    rng_seed: int = 0
    standardize: bool = True
    detrend: bool = True
    two_sided: bool = False
    min_stimulus_interval: Optional[float] = None  # seconds
    threshold_method: str = "mixture_fit"
    kappa: float = 3.0
    min_run: int = 2
    m_grid: Sequence[int] = field(default_factory=_default_m_grid)
    r_grid: Sequence[int] = field(default_factory=_default_r_grid)
    n_features: int = len(FEATURE_LABELS)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _is_auto(value) -> bool:
    return isinstance(value, str) and value == AUTO


def _check_int(name, value, minimum):
    if _is_auto(value):
        return
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"{name} must be an integer or 'auto', got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")


def max_memory(n_samples: int, n_features: int) -> int:
    """Largest M with n_features * M < n_samples - M + 1."""
    # F*M < N - M + 1  <=>  M < (N + 1) / (F + 1)
    return int(np.ceil((n_samples + 1) / (n_features + 1))) - 1


def validate(config: PipelineConfig, y: TimeSeries) -> PipelineConfig:
    """Bounds-check ``config`` against the series; "auto" fields stay symbolic."""
    if not isinstance(y, TimeSeries):
        y = TimeSeries(y)
    n = len(y)
    f = config.n_features
    _check_int("sector_halfwidth", config.sector_halfwidth, 1)
    _check_int("memory_M", config.memory_M, 1)
    _check_int("order_r", config.order_r, 2)
    _check_int("histogram_bins", config.histogram_bins, 1)
    if f < 1:
        raise ValidationError("n_features must be >= 1")

    if not _is_auto(config.sector_halfwidth) and 2 * config.sector_halfwidth >= n:
        raise ValidationError(
            f"series too short: sector length L={2 * config.sector_halfwidth} needs N > L, got N={n}")
    if not _is_auto(config.memory_M):
        m = config.memory_M
        if f * m >= n - m + 1:
            raise ValidationError(
                f"series too short for M={m}: {f}*M={f * m} Hankel rows need fewer than "
                f"N-M+1={n - m + 1} columns (N={n})")
        if not _is_auto(config.order_r) and config.order_r >= f * m:
            raise ValidationError(
                f"order r={config.order_r} must be below the number of singular values ({f * m})")
    if config.min_event_separation is not None and config.min_event_separation < 0:
        raise ValidationError("min_event_separation must be nonnegative")
    if config.min_stimulus_interval is not None and not config.min_stimulus_interval > 0:
        raise ValidationError("min_stimulus_interval must be positive")
    if config.matched_filter is not None:
        w = np.asarray(config.matched_filter, dtype=float)
        if w.ndim != 1 or w.size == 0 or not np.any(w != 0) or not np.all(np.isfinite(w)):
            raise ValidationError("matched_filter must be a non-empty, finite, nonzero 1-D pulse")
        if w.size > n:
            raise ValidationError("matched_filter is longer than the series")
    if config.threshold_method not in ("detachment", "mixture_fit"):
        raise ValidationError(f"unknown threshold_method {config.threshold_method!r}")
    if config.kappa <= 1 or config.min_run < 1:
        raise ValidationError("kappa must exceed 1 and min_run must be >= 1")
    if not config.m_grid or not config.r_grid:
        raise ValidationError("m_grid and r_grid must be non-empty")
    return config
