"""Data-driven decision threshold from the amplitude histogram of the decision signal.

The amplitude density is modelled as a Gaussian core plus a shifted exponential
tail::

    p(d) = w_G * N(d; d0, sigma_d**2) + (1 - w_G) * lam * exp(-lam * (d - d_th)) * [d >= d_th]

Calibration runs in three steps: a rough symmetric-core width around the
histogram mode, a truncated Gaussian fit inside that core, and the first point
above the core where the empirical density detaches from the fitted Gaussian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import ndtr

from .series import TimeSeries, ValidationError

TAU_SYM = 0.5
EPS_P = 1e-6
KAPPA = 3.0
MIN_RUN = 2
MIN_EXCESS_COUNT = 5
MIN_CORE_SAMPLES = 30


def _values(d) -> np.ndarray:
    return d.samples if isinstance(d, TimeSeries) else np.asarray(d, dtype=float).ravel()


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def quantile(self, q: float) -> float:
        """Quantile of the binned distribution, linear within bins."""
        cdf = np.concatenate([[0.0], np.cumsum(self.counts)]) / self.n_samples
        return float(np.interp(q, cdf, self.bin_edges))


def auto_bin_count(values: np.ndarray) -> int:
    """ceil(range / (2 IQR N^-1/3)) clamped to [20, 200]."""
    n = values.size
    span = float(values.max() - values.min())
    q75, q25 = np.percentile(values, [75, 25])
    iqr = float(q75 - q25)
    if span == 0 or iqr == 0:
        return 20 if iqr == 0 and span == 0 else 200
    bins = math.ceil(span / (2.0 * iqr * n ** (-1.0 / 3.0)))
    return int(min(200, max(20, bins)))


def build_histogram(d, bins: Union[int, str] = "auto",
                    value_range: Optional[Tuple[float, float]] = None) -> Histogram:
    """Equal-width histogram over the sample range (widened by +-0.5 if degenerate)."""
    x = _values(d)
    if x.size < 10:
        raise ValidationError(f"histogram needs at least 10 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("decision signal contains non-finite values")
    lo, hi = (float(x.min()), float(x.max())) if value_range is None else map(float, value_range)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    nb = auto_bin_count(x) if isinstance(bins, str) else int(bins)
    if nb < 1:
        raise ValidationError("bin count must be positive")
    counts, edges = np.histogram(x, bins=nb, range=(lo, hi))
    density = counts / (counts.sum() * np.diff(edges))
    return Histogram(edges, counts.astype(np.int64), density)


def robust_sigma(h: Histogram) -> float:
    """IQR / 1.349 of the binned distribution."""
    return (h.quantile(0.75) - h.quantile(0.25)) / 1.349


def _half_width(p: np.ndarray, m: int, step: float) -> float:
    """Half width at half maximum around index ``m``, the narrower side, linearly interpolated."""
    half = 0.5 * p[m]
    sides = []
    for direction in (-1, 1):
        j = m
        while 0 <= j + direction < p.size and p[j + direction] > half:
            j += direction
        if not 0 <= j + direction < p.size:
            continue
        inner, outer = p[j], p[j + direction]
        frac = (inner - half) / (inner - outer) if inner > outer else 0.0
        sides.append((abs(j - m) + frac) * step)
    return min(sides) if sides else float("inf")


def core_sigma(h: Histogram, mode_index: int, density: Optional[np.ndarray] = None) -> float:
    """Scale of the central peak.

    Normally IQR / 1.349. When a large share of samples sits off the core the
    IQR is inflated; if the half width at half maximum around the mode implies
    less than half that scale, HWHM / sqrt(2 ln 2) is used instead.
    """
    sig = robust_sigma(h)
    p = h.density if density is None else density
    hw = _half_width(p, mode_index, float(h.widths[0])) / math.sqrt(2.0 * math.log(2.0))
    return float(hw) if 0 < hw < 0.5 * sig else sig


def _symmetry_centre(p: np.ndarray, m: int, reach: int, span: int) -> int:
    """Bin within ``reach`` of ``m`` about which ``p`` is most nearly mirror-symmetric
    over ``span`` bins; ties go to the bin closest to ``m``."""
    best, best_score = m, np.inf
    for c in sorted(range(max(1, m - reach), min(p.size - 1, m + reach + 1)), key=lambda c: abs(c - m)):
        j = min(span, c, p.size - 1 - c)
        score = float(np.mean(np.abs(p[c - j: c][::-1] - p[c + 1: c + j + 1])))
        if score < best_score:
            best, best_score = c, score
    return best


def _asymmetry_scan(h: Histogram, tau: float = TAU_SYM, eps_p: float = EPS_P):
    """(threshold, mode_centre, ok) for the widest symmetric core around the mode."""
    p = h.density
    c = h.centers
    width = float(h.widths[0])
    sig0 = robust_sigma(h)
    window = max(2, math.ceil(0.3 * sig0 / width)) if sig0 > 0 else 2
    # mode of the lightly smoothed density; raw argmax wanders on flat tops
    window |= 1  # odd, so the smoothing stays centred
    smooth = np.convolve(p, np.ones(window) / window, mode="same")
    m = _symmetry_centre(p, int(np.argmax(smooth)), window, max(1, math.ceil(sig0 / width)))
    sig = core_sigma(h, m, smooth)
    window = max(2, math.ceil(0.3 * sig / width)) if sig > 0 else 2
    asym = []
    best = None
    for j in range(1, h.n_bins - m):
        right = p[m + j]
        left = p[m - j] if m - j >= 0 else 0.0
        a = (left - right) / max(right, eps_p)
        asym.append(min(abs(a), 1.0))
        metric = float(np.mean(asym[-window:]))
        if metric > tau:
            break
        best = c[m + j]
    if best is None:
        return c[m] + 2.0 * sig, c[m], False
    # never narrower than one core sigma: shoulders near the mode are not tails
    return float(max(best, c[m] + sig)), float(c[m]), True


def rough_threshold(h: Histogram, tau: float = TAU_SYM, eps_p: float = EPS_P) -> float:
    """Widest symmetric core around the histogram mode.

    Scans bin centres upward from the mode and keeps the last one whose
    trailing mean relative asymmetry ``|p(d0-x) - p(d0+x)| / p(d0+x)`` (capped
    at 1 per bin, averaged over about 0.3 core sigma) stays below ``tau``.
    Falls back to mode + 2 core sigma, with a warning, when even the first
    window is asymmetric.
    """
    value, _, ok = _asymmetry_scan(h, tau, eps_p)
    if not ok:
        warnings.warn("no symmetric core found; using mode + 2 core sigma", RuntimeWarning)
    return value


def _truncated_moments(mu, sigma, lo, hi):
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    z = ndtr(b) - ndtr(a)
    if z < 1e-12:
        return None
    pa, pb = _phi(a), _phi(b)
    ratio = (pa - pb) / z
    mean = mu + sigma * ratio
    var = sigma * sigma * (1.0 + (a * pa - b * pb) / z - ratio * ratio)
    return mean, var, z


def fit_gaussian_core(d, d_hat: float, center: Optional[float] = None,
                      max_iter: int = 20, tol: float = 1e-6) -> Tuple[float, float]:
    """Mean and std of the samples in ``[center - w, center + w]``, ``w = d_hat - center``.

    The moments are corrected for truncation by matching the truncated-normal
    moments (maximum likelihood for the truncated sample). ``center`` defaults
    to the sample median.
    """
    mu, sigma, _ = _core_fit(_values(d), d_hat, center, max_iter, tol)
    return mu, sigma


def _core_fit(x, d_hat, center, max_iter=20, tol=1e-6):
    c = float(np.median(x)) if center is None else float(center)
    half = float(d_hat) - c
    if not half > 0:
        raise ValidationError("rough threshold must lie above the core centre")
    lo, hi = c - half, c + half
    core = x[(x >= lo) & (x <= hi)]
    if core.size < MIN_CORE_SAMPLES:
        raise ValidationError(f"too few core samples ({core.size} < {MIN_CORE_SAMPLES})")
    m_obs = float(core.mean())
    v_obs = float(core.var())
    if not v_obs > 0:
        raise ValidationError("too few core samples / zero variance in the core")
    mu, sigma = m_obs, math.sqrt(v_obs)
    for _ in range(max_iter):
        mom = _truncated_moments(mu, sigma, lo, hi)
        if mom is None:
            break
        tm, tv, _ = mom
        if not tv > 0:
            break
        mu_new = mu + (m_obs - tm)
        sigma_new = sigma * math.sqrt(v_obs / tv)
        done = abs(mu_new - mu) <= tol * sigma and abs(sigma_new - sigma) <= tol * sigma
        mu, sigma = mu_new, sigma_new
        if done:
            break
    mom = _truncated_moments(mu, sigma, lo, hi)
    z = mom[2] if mom is not None else 1.0
    weight = min(1.0, core.size / (x.size * z))
    return mu, sigma, weight


def _expected_counts(h: Histogram, d0, sigma, weight):
    cdf = ndtr((h.bin_edges - d0) / sigma)
    return h.n_samples * weight * np.diff(cdf)


def _detachment(h: Histogram, d0, sigma_d, weight=1.0, kappa=KAPPA, min_run=MIN_RUN,
                min_count=MIN_EXCESS_COUNT):
    expected = _expected_counts(h, d0, sigma_d, weight)
    c = h.centers
    hit = (h.counts >= kappa * expected) & (h.counts >= min_count) & (c >= d0 + sigma_d)
    run = 0
    for i in range(h.n_bins):
        run = run + 1 if hit[i] else 0
        if run >= min_run:
            return float(c[i - min_run + 1]), True
    return float(d0 + 4.0 * sigma_d), False


def detachment_threshold(h: Histogram, d0: float, sigma_d: float, weight: float = 1.0,
                         kappa: float = KAPPA, min_run: int = MIN_RUN,
                         min_count: int = MIN_EXCESS_COUNT) -> float:
    """First bin centre above ``d0 + sigma_d`` where the empirical counts exceed
    ``kappa`` times the fitted Gaussian for ``min_run`` consecutive bins.

    A bin only qualifies with at least ``min_count`` samples, which keeps
    sparsely populated far-tail bins of a pure Gaussian from tripping the
    test. Returns ``d0 + 4 sigma_d`` when nothing detaches.
    """
    return _detachment(h, d0, sigma_d, weight, kappa, min_run, min_count)[0]


@dataclass(frozen=True)
class ThresholdModel:
    w_G: float
    d0: float
    sigma_d: float
    lam: float
    d_th: float
    method: str = "detachment"
    no_anomaly: bool = False
    fallback: bool = False
    rough: Optional[float] = None
    two_sided: bool = False
    notes: tuple = field(default_factory=tuple)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = _phi((x - self.d0) / self.sigma_d) / self.sigma_d
        t = np.where(x >= self.d_th, self.lam * np.exp(-self.lam * np.clip(x - self.d_th, 0, None)), 0.0)
        return self.w_G * g + (1.0 - self.w_G) * t

    def to_dict(self) -> dict:
        return {
            "w_G": self.w_G, "d0": self.d0, "sigma_d": self.sigma_d, "lambda": self.lam,
            "d_th": self.d_th, "method": self.method, "no_anomaly": self.no_anomaly,
            "fallback": self.fallback, "rough": self.rough, "two_sided": self.two_sided,
            "notes": list(self.notes),
        }


def _tail_rate(x, d_th, sigma):
    tail = x[x >= d_th] - d_th
    if tail.size == 0 or tail.mean() <= 0:
        return 1.0 / sigma
    return 1.0 / float(tail.mean())


def _one_sided(x, h, kappa, min_run):
    value, mode, ok = _asymmetry_scan(h)
    notes = [] if ok else ["rough threshold fallback (mode + 2 core sigma)"]
    mu, sigma, weight = _core_fit(x, value, mode)
    d_th, found = _detachment(h, mu, sigma, weight, kappa, min_run)
    return value, mu, sigma, weight, d_th, found, notes


def calibrate(d, bins: Union[int, str] = "auto", kappa: float = KAPPA, min_run: int = MIN_RUN,
              two_sided: bool = False) -> ThresholdModel:
    """Rough core -> Gaussian core fit -> detachment threshold.

    With ``two_sided`` the same procedure runs on the mirrored signal as well
    and the smaller detachment distance from ``d0`` wins; events are then
    judged on ``|d - d0|``.
    """
    x = _values(d)
    h = build_histogram(x, bins)
    rough, mu, sigma, weight, d_th, found, notes = _one_sided(x, h, kappa, min_run)
    if two_sided:
        xm = -x
        hm = build_histogram(xm, bins)
        _, mu_m, sig_m, w_m, th_m, found_m, notes_m = _one_sided(xm, hm, kappa, min_run)
        off = d_th - mu
        off_m = th_m - mu_m
        if found_m and (not found or off_m < off):
            d_th = mu + off_m
            found = True
            notes = notes + ["negative-going detachment"] + notes_m
    lam = _tail_rate(x, d_th, sigma)
    return ThresholdModel(weight, mu, sigma, lam, d_th, "detachment", not found, False, rough,
                          two_sided, tuple(notes))


def _mixture_loglik_terms(x, w, mu, sigma, lam, t):
    g = w * _phi((x - mu) / sigma) / sigma
    e = np.where(x >= t, (1 - w) * lam * np.exp(-lam * np.clip(x - t, 0, None)), 0.0)
    return g, e


def _profile_shift(xs, w, mu, sigma, lam, lo, hi, n_grid=161):
    """Best exponential shift on a grid over [lo, hi] with the other parameters fixed."""
    g = w * _phi((xs - mu) / sigma) / sigma
    log_g = np.log(np.maximum(g, 1e-300))
    best_t, best_ll = None, -np.inf
    for t in np.linspace(lo, hi, n_grid):
        i = np.searchsorted(xs, t)
        below = log_g[:i].sum()
        above = np.log(g[i:] + (1 - w) * lam * np.exp(-lam * (xs[i:] - t))).sum()
        ll = below + above
        if ll > best_ll:
            best_ll, best_t = ll, t
    return float(best_t), float(best_ll)


def fit_mixture(d, start: Optional[ThresholdModel] = None, max_iter: int = 200,
                tol: float = 1e-7, bins: Union[int, str] = "auto") -> ThresholdModel:
    """Maximum-likelihood Gaussian + shifted-exponential fit, alternating EM updates
    of ``(w_G, d0, sigma_d, lam)`` with a profile search over ``d_th``.

    The shift is confined to within ``2 sigma_d`` of the detachment estimate.
    Falls back to the detachment model (``fallback=True``) when there is no
    tail, too little core, or no convergence.
    """
    x = _values(d)
    if x.size < 500:
        raise ValidationError(f"mixture fit needs at least 500 samples, got {x.size}")
    try:
        base = start if start is not None else calibrate(x, bins)
    except ValidationError as exc:
        return _degenerate_model(x, str(exc))
    if base.no_anomaly:
        return ThresholdModel(1.0, base.d0, base.sigma_d, base.lam, base.d_th, "mixture_fit",
                              True, True, base.rough, base.two_sided,
                              base.notes + ("no tail detected",))
    xs = np.sort(x)
    anchor = base.d_th
    lo_t, hi_t = anchor - 2 * base.sigma_d, anchor + 2 * base.sigma_d
    w, mu, sigma, t = base.w_G, base.d0, base.sigma_d, base.d_th
    w = min(max(w, 0.05), 0.995)
    lam = _tail_rate(xs, t, sigma)
    prev = None
    converged = False
    for _ in range(max_iter):
        g, e = _mixture_loglik_terms(xs, w, mu, sigma, lam, t)
        tot = g + e
        tot = np.maximum(tot, 1e-300)
        rg = g / tot
        re = 1.0 - rg
        sg = rg.sum()
        se = re.sum()
        if sg < MIN_CORE_SAMPLES or se < 1:
            break
        w = sg / xs.size
        mu = float(np.dot(rg, xs) / sg)
        sigma = float(math.sqrt(np.dot(rg, (xs - mu) ** 2) / sg))
        excess = np.dot(re, np.clip(xs - t, 0, None))
        lam = float(se / excess) if excess > 0 else lam
        t, ll = _profile_shift(xs, w, mu, sigma, lam, lo_t, hi_t)
        if prev is not None and abs(ll - prev) <= tol * abs(prev):
            converged = True
            break
        prev = ll
    if not converged or not (0 < w < 1) or not sigma > 0:
        return ThresholdModel(base.w_G, base.d0, base.sigma_d, base.lam, base.d_th, "detachment",
                              base.no_anomaly, True, base.rough, base.two_sided,
                              base.notes + ("mixture fit did not converge",))
    return ThresholdModel(float(w), float(mu), float(sigma), float(lam), float(t), "mixture_fit",
                          False, False, base.rough, base.two_sided, base.notes)


def _degenerate_model(x, reason):
    lo = float(x.min())
    spread = float(x.std()) or 1.0
    return ThresholdModel(0.0, lo, spread, 1.0 / spread, lo + spread, "detachment", True, True,
                          None, False, (reason,))


def histogram_fit_csv(h: Histogram, model: ThresholdModel) -> str:
    rows = ["bin_center,empirical_density,fitted_density"]
    fitted = model.pdf(h.centers)
    for c, e, f in zip(h.centers, h.density, fitted):
        rows.append(f"{c:.17g},{e:.17g},{f:.17g}")
    return "\n".join(rows) + "\n"
