"""Multivariate basis functions built from two neighbouring sectors of a raw series.

For a centre index ``n`` and half-width ``h = L/2`` the left sector is
``[n-h, n-1]`` and the right sector ``[n+1, n+h]``; the centre sample belongs to
neither. Near the edges the sectors are truncated to the available indices and
every sector statistic is a per-sample average scaled back by ``h``, so interior
values equal the plain sector sums. A sector with no samples left falls back to
the centre sample itself.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .series import FEATURE_LABELS, FeatureBank, PipelineConfig, TimeSeries, ValidationError

ENERGY_EPS = 1e-12


def _check_sector(n: int, L: int):
    if isinstance(L, bool) or int(L) != L or L < 2 or L % 2:
        raise ValidationError(f"sector length L must be an even integer >= 2, got {L}")
    if L >= n:
        raise ValidationError(f"sector length L={L} must be shorter than the series (N={n})")


def _sectors(x: np.ndarray, h: int):
    """(left, right) windows of shape (N, h), NaN where a sector runs off the series."""
    pad = np.full(h, np.nan)
    padded = np.concatenate([pad, x, pad])
    win = sliding_window_view(padded, h)
    # row n of `left` holds x[n-h .. n-1], row n of `right` holds x[n+1 .. n+h]
    left = win[: x.size]
    right = win[h + 1: h + 1 + x.size]
    return left, right


def _sector_stat(windows: np.ndarray, centre: np.ndarray, robust: bool) -> np.ndarray:
    """Per-row mean (or median) over the non-NaN entries; empty rows use the centre."""
    count = np.sum(~np.isnan(windows), axis=1)
    out = centre.astype(float).copy()
    full = count == windows.shape[1]
    part = (count > 0) & ~full
    if robust:
        if np.any(full):
            out[full] = np.median(windows[full], axis=1)
        if np.any(part):
            out[part] = np.nanmedian(windows[part], axis=1)
    else:
        if np.any(full):
            out[full] = np.sum(windows[full], axis=1) / windows.shape[1]
        if np.any(part):
            out[part] = np.nansum(windows[part], axis=1) / count[part]
    return out


def _values(y) -> np.ndarray:
    return y.samples if isinstance(y, TimeSeries) else np.asarray(y, dtype=float)


def _wrap(y, values: np.ndarray):
    return y.with_samples(values) if isinstance(y, TimeSeries) else values


def local_convexity(y, L: int, robust: bool = False):
    """Centre sample minus the average of both sectors.

    With ``robust`` the average is the mean of the two sector medians.
    """
    x = _values(y)
    _check_sector(x.size, L)
    h = L // 2
    left, right = _sectors(x, h)
    if robust:
        ref = 0.5 * (_sector_stat(left, x, True) + _sector_stat(right, x, True))
    else:
        both = np.concatenate([left, right], axis=1)
        ref = _sector_stat(both, x, False)
    return _wrap(y, x - ref)


def mean_difference(y, L: int, robust: bool = False):
    """Right-sector sum minus left-sector sum (``h`` times the difference of medians if robust)."""
    x = _values(y)
    _check_sector(x.size, L)
    h = L // 2
    left, right = _sectors(x, h)
    diff = _sector_stat(right, x, robust) - _sector_stat(left, x, robust)
    return _wrap(y, h * diff)


def energy_ratio(y, L: int, robust: bool = False):
    """Right-sector energy over left-sector energy.

    Indices whose denominator falls below ``1e-12 * max|y|**2`` report 1.0.
    """
    x = _values(y)
    _check_sector(x.size, L)
    h = L // 2
    sq = x * x
    left, right = _sectors(sq, h)
    num = _sector_stat(right, sq, robust)
    den = _sector_stat(left, sq, robust)
    floor = ENERGY_EPS * float(np.max(sq)) if sq.size else 0.0
    ok = den >= floor
    if floor == 0.0:
        ok = den > 0
    out = np.ones_like(x)
    out[ok] = num[ok] / den[ok]
    return _wrap(y, out)


def matched_filter_refine(y, w):
    """Zero-phase correlation of ``y`` with the pulse shape ``w``, normalised by the pulse energy.

    ``out[n] = sum_k y[n - c + k] * w[k] / sum_k w[k]**2`` with ``c = (len(w) - 1) // 2``
    and zeros outside ``y``. Lag zero sits at the pulse centre, so filtering does
    not move event times: a clean copy of ``w`` starting at ``n0`` peaks at
    exactly 1.0 at ``n0 + c``.
    """
    x = _values(y)
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0 or not np.any(w != 0):
        raise ValidationError("pulse shape must be non-empty and not all zero")
    if w.size > x.size:
        raise ValidationError("pulse shape is longer than the series")
    c = (w.size - 1) // 2
    padded = np.concatenate([np.zeros(c), x, np.zeros(w.size - 1 - c)])
    out = np.correlate(padded, w, mode="valid") / float(np.dot(w, w))
    return _wrap(y, out)


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; constant input maps to zeros."""
    x = np.asarray(x, dtype=float)
    mu = x.mean()
    sd = x.std()
    if not sd > 1e-12 * max(1.0, abs(mu)):
        return np.zeros_like(x)
    return (x - mu) / sd


def detrend_baseline(x: np.ndarray, window: int) -> np.ndarray:
    """Subtract a running-median baseline of odd length ``window``."""
    from scipy.ndimage import median_filter

    window = max(3, int(window) | 1)
    if window >= x.size:
        return x - np.median(x)
    return x - median_filter(x, size=window, mode="nearest")


def build_feature_bank(y: TimeSeries, config: PipelineConfig,
                       sector_halfwidth: Optional[int] = None) -> FeatureBank:
    """Raw series plus convexity, mean shift and energy ratio, in that order.

    ``sector_halfwidth`` overrides ``config.sector_halfwidth`` (needed when the
    config still says "auto").
    """
    h = config.sector_halfwidth if sector_halfwidth is None else sector_halfwidth
    if isinstance(h, str):
        raise ValidationError("sector_halfwidth must be resolved before building features")
    L = 2 * int(h)
    src = y
    if config.matched_filter is not None:
        src = matched_filter_refine(y, config.matched_filter)
    x = src.samples
    raw = x
    if config.detrend:
        raw = detrend_baseline(x, detrend_window(int(h)))
    cols = [
        raw,
        local_convexity(x, L, config.robust_median),
        mean_difference(x, L, config.robust_median),
        energy_ratio(raw, L, config.robust_median),
    ]
    if config.standardize:
        cols = [standardize(c) for c in cols]
    feats = tuple(y.with_samples(c) for c in cols)
    return FeatureBank(feats, FEATURE_LABELS, int(h))


def detrend_window(sector_halfwidth: int) -> int:
    """Running-median length used to remove slow baseline drift from the raw feature."""
    return 8 * sector_halfwidth + 1
