"""Synthetic scenarios with ground truth, and event-level scoring.

Three surrogates: calcium fluorescence with spikes, a quasi-periodic ECG-like
trace with morphologically distorted stretches, and mud-pulse telemetry with
baseline drift and impulsive noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .series import TimeSeries, ValidationError


@dataclass(frozen=True)
class GroundTruth:
    event_indices: Tuple[int, ...] = ()
    event_windows: Tuple[Tuple[int, int], ...] = ()
    bits: Optional[Tuple[int, ...]] = None
    slot_len: Optional[int] = None

    def __post_init__(self):
        idx = tuple(int(i) for i in self.event_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError("event indices must be strictly increasing")
        if idx and idx[0] < 0:
            raise ValidationError("event indices must be nonnegative")
        object.__setattr__(self, "event_indices", idx)
        object.__setattr__(self, "event_windows", tuple((int(a), int(b)) for a, b in self.event_windows))
        if self.bits is not None:
            object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))

    def flags(self, n: int) -> np.ndarray:
        """Per-sample 0/1 truth column."""
        out = np.zeros(n, dtype=int)
        out[list(self.event_indices)] = 1
        for a, b in self.event_windows:
            out[a:b] = 1
        return out


# --- calcium -----------------------------------------------------------------

def calcium_kernel(tau_rise: float, tau_decay: float, sample_period: float,
                   length: Optional[int] = None) -> np.ndarray:
    """Double-exponential transient scaled to unit peak; element 0 is the spike sample."""
    if not (tau_rise > 0 and tau_decay > 0) or tau_rise == tau_decay:
        raise ValidationError("calcium time constants must be positive and distinct")
    if length is None:
        length = int(np.ceil(8 * max(tau_rise, tau_decay) / sample_period)) + 1
    t = np.arange(length) * sample_period
    k = np.exp(-t / tau_decay) - np.exp(-t / tau_rise)
    if tau_rise > tau_decay:
        k = -k
    return k / k.max()


def spike_train(n_samples: int, rate_hz: float, sample_period: float, rng,
                refractory: float = 0.0) -> np.ndarray:
    """Poisson spike sample indices with an optional dead time after each spike."""
    if not rate_hz > 0:
        raise ValidationError("rate must be positive")
    duration = n_samples * sample_period
    times = []
    t = rng.exponential(1.0 / rate_hz)
    while t < duration:
        times.append(t)
        t += refractory + rng.exponential(1.0 / rate_hz)
    idx = np.unique(np.floor(np.asarray(times) / sample_period).astype(int))
    return idx[idx < n_samples]


def gen_calcium(n_samples: int = 14400, rate_hz: float = 0.2, kernel_tau_rise: float = 0.05,
                kernel_tau_decay: float = 0.5, noise_rms: float = 0.1, baseline: float = 0.003,
                seed: int = 0, sample_period: float = 1 / 60, refractory: float = 0.4,
                saturation: bool = False, offset: float = 0.0,
                spikes: Optional[Sequence[int]] = None):
    """Spike train convolved with a unit-peak transient, plus a random-walk baseline
    (step std ``baseline``) and white noise of rms ``noise_rms`` (in spike units).

    ``spikes`` overrides the Poisson draw. With ``saturation`` the summed
    transients pass through ``s / (1 + s)``.
    """
    rng = np.random.default_rng(seed)
    if spikes is None:
        idx = spike_train(n_samples, rate_hz, sample_period, rng, refractory)
    else:
        idx = np.unique(np.asarray(spikes, dtype=int))
        if idx.size and (idx[0] < 0 or idx[-1] >= n_samples):
            raise ValidationError("spike index out of range")
    train = np.zeros(n_samples)
    np.add.at(train, idx, 1.0)
    kernel = calcium_kernel(kernel_tau_rise, kernel_tau_decay, sample_period)
    s = np.convolve(train, kernel)[:n_samples]
    if saturation:
        s = s / (1.0 + s)
    drift = np.cumsum(rng.normal(0.0, baseline, n_samples)) if baseline > 0 else np.zeros(n_samples)
    noise = rng.normal(0.0, noise_rms, n_samples) if noise_rms > 0 else np.zeros(n_samples)
    y = offset + s + drift + noise
    return TimeSeries(y, sample_period), GroundTruth(tuple(int(i) for i in idx))


# --- ECG-like -----------------------------------------------------------------

_WAVES = (  # (relative centre, relative width, amplitude): P, Q, R, S, T
    (0.20, 0.035, 0.15),
    (0.36, 0.012, -0.12),
    (0.40, 0.014, 1.00),
    (0.44, 0.012, -0.25),
    (0.68, 0.060, 0.30),
)


def beat_template(length: int, warp: float = 1.0, amp: float = 1.0, t_wave: float = 1.0) -> np.ndarray:
    """One stylised heartbeat of ``length`` samples built from Gaussian waves."""
    u = np.arange(length) / length
    out = np.zeros(length)
    for i, (c, w, a) in enumerate(_WAVES):
        scale = t_wave if i == 4 else 1.0
        out += a * scale * np.exp(-0.5 * ((u - c) / (w * warp)) ** 2)
    return amp * out


def random_windows(n_samples: int, count: int, length: int, rng, margin: int = 0) -> List[Tuple[int, int]]:
    """``count`` non-overlapping windows of ``length`` samples, spaced at least ``length`` apart."""
    if count == 0:
        return []
    span = n_samples - 2 * margin - count * length - (count - 1) * length
    if span < 0:
        raise ValidationError("series too short for the requested windows")
    gaps = np.sort(rng.integers(0, span + 1, size=count))
    starts = margin + gaps + np.arange(count) * 2 * length
    return [(int(s), int(s + length)) for s in starts]


def gen_periodic_anomaly(n_samples: int = 2160, beat_period: int = 72,
                         anomaly_windows: Optional[Sequence[Tuple[int, int]]] = None,
                         morph_distortion: float = 0.5, noise_rms: float = 0.05, seed: int = 0,
                         sample_period: float = 1 / 250, n_windows: int = 3):
    """Repeating beat template; beats starting inside an anomaly window are widened,
    rescaled and get an inverted T wave in proportion to ``morph_distortion``.

    When ``anomaly_windows`` is None, ``n_windows`` windows of three beats each
    are drawn from ``seed``. With zero distortion no windows are reported.
    """
    rng = np.random.default_rng(seed)
    if anomaly_windows is None:
        anomaly_windows = random_windows(n_samples, n_windows, 3 * beat_period, rng,
                                         margin=2 * beat_period)
    wins = sorted((int(a), int(b)) for a, b in anomaly_windows)
    for a, b in wins:
        if not 0 <= a < b <= n_samples:
            raise ValidationError(f"anomaly window ({a}, {b}) outside the series")
    for (a0, b0), (a1, b1) in zip(wins, wins[1:]):
        if a1 < b0:
            raise ValidationError("anomaly windows overlap")
    y = np.zeros(n_samples)
    normal = beat_template(beat_period)
    for start in range(0, n_samples, beat_period):
        inside = any(a <= start < b for a, b in wins)
        if inside and morph_distortion > 0:
            beat = beat_template(beat_period, warp=1.0 + 2.0 * morph_distortion,
                                 amp=1.0 + morph_distortion, t_wave=1.0 - 4.0 * morph_distortion)
        else:
            beat = normal
        stop = min(n_samples, start + beat_period)
        y[start:stop] += beat[: stop - start]
    y += rng.normal(0.0, noise_rms, n_samples) if noise_rms > 0 else 0.0
    truth = GroundTruth(event_windows=tuple(wins) if morph_distortion > 0 else ())
    return TimeSeries(y, sample_period), truth


# --- mud pulses ---------------------------------------------------------------

def default_pulse(length: int = 20) -> np.ndarray:
    """Half-sine pressure pulse of unit peak."""
    return np.sin(np.pi * (np.arange(length) + 0.5) / length)


def gen_pulse_train(n_slots: int = 200, slot_len: int = 50, bits: Optional[Sequence[int]] = None,
                    pulse_shape: Optional[np.ndarray] = None, drift_amplitude: float = 1.0,
                    noise_rms: float = 0.5, impulsive_rate: float = 0.002, seed: int = 0,
                    sample_period: float = 0.1, impulse_scale: float = 10.0):
    """One slot per bit; a 1 places ``pulse_shape`` at the slot start.

    Adds a slow drift (integrated random walk scaled to peak ``drift_amplitude``),
    white noise, and impulsive outliers: each sample is replaced with probability
    ``impulsive_rate`` by a spike of ``impulse_scale * noise_rms`` with random sign.
    """
    rng = np.random.default_rng(seed)
    if bits is None:
        bits = rng.integers(0, 2, size=n_slots)
    bits = np.asarray(bits, dtype=int)
    if bits.size != n_slots:
        raise ValidationError(f"bits length {bits.size} != n_slots {n_slots}")
    w = default_pulse() if pulse_shape is None else np.asarray(pulse_shape, dtype=float)
    if w.size > slot_len:
        raise ValidationError("pulse longer than slot")
    n = n_slots * slot_len
    y = np.zeros(n)
    onsets = [s * slot_len for s in range(n_slots) if bits[s]]
    for o in onsets:
        y[o: o + w.size] += w
    if drift_amplitude > 0:
        walk = np.cumsum(np.cumsum(rng.normal(size=n)))
        walk -= np.linspace(walk[0], walk[-1], n)
        walk -= walk.mean()
        peak = np.max(np.abs(walk))
        if peak > 0:
            y += drift_amplitude * walk / peak
    if noise_rms > 0:
        y += rng.normal(0.0, noise_rms, n)
    if impulsive_rate > 0:
        hit = rng.random(n) < impulsive_rate
        y[hit] = impulse_scale * noise_rms * rng.choice([-1.0, 1.0], size=int(hit.sum()))
    truth = GroundTruth(tuple(onsets), bits=tuple(int(b) for b in bits), slot_len=slot_len)
    return TimeSeries(y, sample_period), truth


# --- scoring -----------------------------------------------------------------

def _peaks(events) -> np.ndarray:
    return np.sort(np.asarray([e.peak_index if hasattr(e, "peak_index") else int(e) for e in events],
                              dtype=int))


def match_events(peaks: Sequence[int], truth: Sequence[int], tol: int) -> int:
    """Maximum number of one-to-one pairs with ``|peak - truth| <= tol``.

    A left-to-right sweep over sorted truths, each taking the earliest unused
    peak in its window, is optimal for equal-width windows on a line.
    """
    p = np.sort(np.asarray(peaks, dtype=int))
    t = np.sort(np.asarray(truth, dtype=int))
    i = matched = 0
    for ti in t:
        while i < p.size and p[i] < ti - tol:
            i += 1
        if i < p.size and p[i] <= ti + tol:
            matched += 1
            i += 1
    return matched


def error_ratio(events, truth: GroundTruth, tol_samples: int) -> float:
    """(misses + false positives) / max(1, number of true events)."""
    if tol_samples < 0:
        raise ValidationError("tolerance must be nonnegative")
    peaks = _peaks(events)
    n_true = len(truth.event_indices)
    hits = match_events(peaks, truth.event_indices, tol_samples)
    misses = n_true - hits
    false_pos = peaks.size - hits
    return (misses + false_pos) / max(1, n_true)


def decode_bits(events, n_slots: int, slot_len: int) -> np.ndarray:
    out = np.zeros(n_slots, dtype=int)
    for p in _peaks(events):
        s = p // slot_len
        if 0 <= s < n_slots:
            out[s] = 1
    return out


def bit_error_rate(events, truth: GroundTruth, slot_len: Optional[int] = None) -> float:
    """Fraction of slots whose decoded bit (any event peak inside) differs from the truth."""
    if truth.bits is None:
        raise ValidationError("ground truth carries no bits")
    slot_len = truth.slot_len if slot_len is None else slot_len
    bits = np.asarray(truth.bits)
    decoded = decode_bits(events, bits.size, slot_len)
    return float(np.mean(decoded != bits))


def window_hits(events, truth: GroundTruth, merge: int = 0) -> Tuple[int, int]:
    """(windows containing an event peak, out-of-window detections).

    Out-of-window peaks closer than ``merge`` samples count once.
    """
    peaks = _peaks(events)
    flagged = sum(any(a <= p < b for p in peaks) for a, b in truth.event_windows)
    outside = [p for p in peaks if not any(a <= p < b for a, b in truth.event_windows)]
    false = 0
    last = None
    for p in outside:
        if last is None or p - last >= merge:
            false += 1
        last = p
    return flagged, false
