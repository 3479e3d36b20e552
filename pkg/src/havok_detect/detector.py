"""End-to-end detection: parameter selection, decision signal, threshold, events."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import dynamics, embedding, features, threshold
from .series import (AUTO, NumericalError, PipelineConfig, TimeSeries, ValidationError,
                     max_memory, validate)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_HALFWIDTH = 8


@dataclass(frozen=True)
class Event:
    onset_index: int
    peak_index: int
    end_index: int
    peak_value: float
    kind: str = "interval"

    def shifted(self, k: int) -> "Event":
        return Event(self.onset_index + k, self.peak_index + k, self.end_index + k,
                     self.peak_value, self.kind)

    def to_dict(self) -> dict:
        return {"onset_index": self.onset_index, "peak_index": self.peak_index,
                "end_index": self.end_index, "peak_value": self.peak_value, "kind": self.kind}


@dataclass(frozen=True, eq=False)
class DetectionReport:
    events: Tuple[Event, ...]
    trace: Optional[dynamics.DecisionTrace]
    threshold: threshold.ThresholdModel
    memory_M: int
    order_r: int
    sector_halfwidth: int
    singular_values: np.ndarray
    dominance: float
    offset: int
    config: PipelineConfig
    warnings: Tuple[str, ...] = ()
    model: Optional[dynamics.LinearModel] = None
    decomposition: Optional[embedding.ModeDecomposition] = field(default=None, repr=False)

    @property
    def peak_indices(self) -> List[int]:
        return [e.peak_index for e in self.events]

    def to_dict(self, include_traces: bool = False) -> dict:
        cfg = self.config
        out = {
            "schema_version": SCHEMA_VERSION,
            "events": [e.to_dict() for e in self.events],
            "threshold": self.threshold.to_dict(),
            "decomposition": {
                "M": self.memory_M, "r": self.order_r,
                "singular_values": [float(s) for s in self.singular_values],
                "dominance_ratio": _json_float(self.dominance),
            },
            "alignment_offset": self.offset,
            "sector_halfwidth": self.sector_halfwidth,
            "config": {
                "sector_halfwidth": cfg.sector_halfwidth, "memory_M": cfg.memory_M,
                "order_r": cfg.order_r, "robust_median": cfg.robust_median,
                "matched_filter": None if cfg.matched_filter is None
                else [float(v) for v in np.asarray(cfg.matched_filter, dtype=float)],
                "use_hilbert": cfg.use_hilbert, "min_event_separation": cfg.min_event_separation,
                "histogram_bins": cfg.histogram_bins, "rng_seed": cfg.rng_seed,
                "standardize": cfg.standardize, "detrend": cfg.detrend, "two_sided": cfg.two_sided,
                "min_stimulus_interval": cfg.min_stimulus_interval,
                "threshold_method": cfg.threshold_method, "kappa": cfg.kappa, "min_run": cfg.min_run,
                "m_grid": list(cfg.m_grid), "r_grid": list(cfg.r_grid),
            },
            "warnings": list(self.warnings),
        }
        if self.model is not None:
            out["linear_model"] = {"A": self.model.A.tolist(), "B": self.model.B.tolist(),
                                   "train_mse": self.model.train_mse}
        if include_traces and self.trace is not None:
            out["trace"] = {"v": self.trace.v.samples.tolist(),
                            "r_force": self.trace.r_force.samples.tolist(),
                            "d": self.trace.d.samples.tolist(),
                            "hilbert_applied": self.trace.hilbert_applied}
        return out

    def to_json(self, include_traces: bool = False) -> str:
        return json.dumps(self.to_dict(include_traces), indent=2, sort_keys=True)


def _json_float(x: float):
    return x if math.isfinite(x) else None


def select_sector_halfwidth(min_stimulus_interval: float, sample_period: float) -> int:
    """L/2 = floor(interval / (2 T_s)), at least 2."""
    if not min_stimulus_interval > 0:
        raise ValidationError("min_stimulus_interval must be positive")
    return max(2, int(math.floor(min_stimulus_interval / (2.0 * sample_period) + 1e-9)))


def _fit_order(decomp: embedding.ModeDecomposition, r: int):
    traj = dynamics.orient_modes(embedding.trajectory(decomp, r))
    model = dynamics.fit_linear_model(traj)
    return traj, model


def select_order(bank, M_grid: Sequence[int], r_grid: Sequence[int],
                 horizon: Optional[int] = None) -> Tuple[int, int]:
    """Grid point minimising the normalised reconstruction error ``||v_hat - v||^2 / ||v||^2``.

    ``horizon`` restarts the free run from the observed state every that many
    samples (see :func:`dynamics.reconstruction_nmse`). Ties go to the smaller
    M, then the smaller r.
    """
    return _select_order(bank, M_grid, r_grid, horizon)[0]


def _select_order(bank, M_grid, r_grid, horizon=None):
    if not M_grid or not r_grid:
        raise ValidationError("empty parameter grid")
    scores = {}
    n, f = bank.n_samples, bank.n_features
    for M in sorted(set(int(m) for m in M_grid)):
        if M < 1 or f * M >= n - M + 1:
            continue
        rs = [int(r) for r in sorted(set(r_grid)) if 2 <= r < f * M]
        if not rs:
            continue
        decomp = embedding.decompose(embedding.build_hankel(bank, M))
        for r in rs:
            try:
                traj, model = _fit_order(decomp, r)
            except NumericalError:
                continue
            scores[(M, r)] = dynamics.reconstruction_nmse(model, traj, horizon)
    if not scores:
        raise ValidationError("no valid (M, r) grid point for this series")
    best = min(scores, key=lambda k: (scores[k], k[0], k[1]))
    return best, scores


def extract_events(d, d_th: float, min_separation: int = 0, two_sided: bool = False,
                   d0: float = 0.0) -> List[Event]:
    """Maximal runs at or above threshold, merged when the gap is below ``min_separation``.

    ``two_sided`` tests ``|d - d0| >= d_th - d0`` instead. The peak of a run is
    its (earliest) argmax of ``d``, or of ``|d - d0|`` when two-sided.
    """
    x = d.samples if isinstance(d, TimeSeries) else np.asarray(d, dtype=float)
    if two_sided:
        score = np.abs(x - d0)
        above = score >= d_th - d0
    else:
        score = x
        above = x >= d_th
    if not np.any(above):
        return []
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    runs = [[int(starts[0]), int(ends[0])]]
    for s, e in zip(starts[1:], ends[1:]):
        if s - runs[-1][1] < min_separation:
            runs[-1][1] = int(e)
        else:
            runs.append([int(s), int(e)])
    events = []
    for s, e in runs:
        seg = score[s: e + 1]
        p = s + int(np.argmax(seg))
        events.append(Event(s, p, e, float(x[p]), "point" if s == e else "interval"))
    return events


def _resolve_halfwidth(config: PipelineConfig, y: TimeSeries, warn: list) -> int:
    h = config.sector_halfwidth
    if h == AUTO:
        if config.min_stimulus_interval is not None:
            h = select_sector_halfwidth(config.min_stimulus_interval, y.sample_period)
        else:
            h = DEFAULT_HALFWIDTH
            warn.append(f"no min_stimulus_interval given; sector half-width defaults to {h}")
    h = int(h)
    while 2 * h >= len(y) and h > 1:
        h //= 2
    return h


def _resolve_order(config, bank, warn):
    M, r = config.memory_M, config.order_r
    if M != AUTO and r != AUTO:
        return int(M), int(r)
    L = 2 * bank.sector_halfwidth
    mmax = max_memory(bank.n_samples, bank.n_features)
    if M != AUTO:
        m_grid = [int(M)]
    else:
        # a delay window longer than L smears an event over more than the L/2
        # localisation tolerance, so the automatic grid stops at L
        m_grid = [m for m in config.m_grid if m <= min(mmax, L)]
        if not m_grid:
            m_grid = [max(1, min(mmax, L))]
            warn.append(f"no grid memory fits; using M={m_grid[0]}")
    r_grid = [int(r)] if r != AUTO else list(config.r_grid)
    (M, r), _ = _select_order(bank, m_grid, r_grid, horizon=L)
    log.info("selected M=%d r=%d", M, r)
    return M, r


def run_pipeline(y: TimeSeries, config: Optional[PipelineConfig] = None) -> DetectionReport:
    """Features -> Hankel SVD -> linear fit -> decision signal -> threshold -> events.

    Event indices refer to the input series: trajectory index ``k`` maps to
    sample ``k + M//2``.
    """
    if not isinstance(y, TimeSeries):
        y = TimeSeries(y)
    config = PipelineConfig() if config is None else config
    validate(config, y)
    warn: List[str] = []

    h = _resolve_halfwidth(config, y, warn)
    try:
        bank = features.build_feature_bank(y, config, h)
    except ValidationError as exc:
        raise ValidationError(f"features: {exc}") from exc

    if not np.any(bank.matrix() != 0):
        M = 1 if config.memory_M == AUTO else int(config.memory_M)
        r = 2 if config.order_r == AUTO else int(config.order_r)
        return _empty_report(y, config, h, M, r, warn + ["constant input: no anomaly"])

    try:
        M, r = _resolve_order(config, bank, warn)
        decomp = embedding.decompose(embedding.build_hankel(bank, M), r)
        traj, model = _fit_order(decomp, r)
    except NumericalError as exc:
        raise NumericalError(f"embedding/dynamics: {exc}") from exc
    except ValidationError as exc:
        raise ValidationError(f"embedding/dynamics: {exc}") from exc

    trace = dynamics.decision_signal(traj, model, config.use_hilbert)
    dom = embedding.dominance_ratio(decomp)

    try:
        thr = threshold.calibrate(trace.d, config.histogram_bins, config.kappa, config.min_run,
                                  config.two_sided)
        if config.threshold_method == "mixture_fit":
            # the mixture has a single right tail; two-sided runs keep the mirrored calibration
            if config.two_sided:
                warn.append("mixture fit skipped in two-sided mode; using detachment")
            elif len(trace.d) < 500:
                warn.append("mixture fit needs 500 samples; using detachment")
            else:
                thr = threshold.fit_mixture(trace.d, start=thr)
    except ValidationError as exc:
        warn.append(f"threshold: {exc}")
        thr = threshold._degenerate_model(trace.d.samples, str(exc))
    if thr.no_anomaly:
        warn.append("no detachment from the Gaussian core (no-anomaly flag)")

    sep = h if config.min_event_separation is None else int(config.min_event_separation)
    offset = embedding.alignment_offset(M)
    events = [e.shifted(offset) for e in
              extract_events(trace.d, thr.d_th, sep, config.two_sided, thr.d0)]
    return DetectionReport(tuple(events), trace, thr, M, r, h, decomp.sigma.copy(), dom, offset,
                           config, tuple(warn), model, decomp)


def _empty_report(y, config, h, M, r, warn):
    thr = threshold.ThresholdModel(1.0, 0.0, 1.0, 1.0, 4.0, "detachment", True, False, None,
                                   config.two_sided, ("constant decision signal",))
    return DetectionReport((), None, thr, M, r, h, np.zeros(0), float("nan"),
                           embedding.alignment_offset(M), config, tuple(warn))
