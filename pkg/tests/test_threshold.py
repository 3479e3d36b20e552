import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from havok_detect import ValidationError
from havok_detect.threshold import (ThresholdModel, auto_bin_count, build_histogram, calibrate,
                                    detachment_threshold, fit_gaussian_core, fit_mixture,
                                    histogram_fit_csv, rough_threshold)


def mixture(rng, n, w=0.9, d0=0.0, s=1.0, t=3.0, lam=2.0):
    """Samples of w N(d0, s^2) + (1-w) * shifted exponential at t."""
    k = rng.binomial(n, 1 - w)
    return rng.permutation(np.concatenate([rng.normal(d0, s, n - k), t + rng.exponential(1 / lam, k)]))


# --- histogram --------------------------------------------------------------------

def test_histogram_auto_bins_and_normalisation():
    # [DERIVED]
    x = np.random.default_rng(0).normal(size=10000)
    h = build_histogram(x)
    assert 20 <= h.n_bins <= 200
    assert h.n_samples == 10000
    assert np.sum(h.density * h.widths) == pytest.approx(1.0, abs=1e-9)
    assert h.n_bins == auto_bin_count(x)


def test_histogram_degenerate_range():
    # [TRIVIAL] range widened by +-0.5
    h = build_histogram(np.full(50, 2.0))
    assert h.bin_edges[0] == 1.5 and h.bin_edges[-1] == 2.5
    assert np.count_nonzero(h.counts) == 1


def test_histogram_explicit_bins():
    # [TRIVIAL]
    assert build_histogram(np.random.default_rng(1).normal(size=500), 100).n_bins == 100


def test_histogram_needs_ten_samples():
    with pytest.raises(ValidationError):
        build_histogram(np.arange(9.0))


# --- rough threshold -------------------------------------------------------------

def test_rough_threshold_gaussian_is_at_least_two_sigma():
    # [DERIVED] Monte-Carlo, 30 seeds
    for seed in range(30):
        x = np.random.default_rng(seed).normal(size=10000)
        h = build_histogram(x)
        assert rough_threshold(h) >= 2.0 * x.std() + (h.centers[np.argmax(h.counts)] - 0.5)


def test_rough_threshold_mirror_symmetric_returns_largest():
    # [TRIVIAL] odd bin count: the mode bin is the centre of symmetry
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=5000)
        h = build_histogram(np.concatenate([x, -x]), 101)
        assert rough_threshold(h) == pytest.approx(h.centers[-1])


def test_rough_threshold_bump_at_three_sigma():
    # [DERIVED] Gaussian core plus a narrow bump at +3 sigma
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=20000)
        hit = rng.random(20000) < 0.04
        x[hit] = 3.0 + rng.normal(0, 0.2, hit.sum())
        assert 2.0 <= rough_threshold(build_histogram(x)) <= 3.5


def test_rough_threshold_fallback_warns():
    # [TRIVIAL] a one-sided histogram (flat left shoulder, empty right side) has no
    # symmetric core: mode + 2 core sigma with a warning
    from havok_detect.threshold import Histogram, core_sigma

    counts = np.array([50] * 20 + [1000] + [0] * 20)
    edges = np.arange(counts.size + 1, dtype=float)
    h = Histogram(edges, counts, counts / counts.sum())
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        val = rough_threshold(h)
    assert val > h.centers[20]
    assert val == pytest.approx(h.centers[20] + 2 * core_sigma(h, 20, None), rel=0.5)
    assert any("symmetric core" in str(w.message) for w in rec)


# --- Gaussian core ----------------------------------------------------------------

def test_core_fit_wide_window():
    # [DERIVED] d_hat = 4 keeps almost everything
    x = np.random.default_rng(2).normal(size=10000)
    mu, sigma = fit_gaussian_core(x, 4.0, 0.0)
    assert abs(mu) < 0.05 and sigma == pytest.approx(1.0, rel=0.05)


def test_core_fit_corrects_truncation_bias():
    # [DERIVED] scipy's truncated normal is the oracle for the uncorrected width
    from scipy.stats import truncnorm

    x = np.random.default_rng(3).normal(size=10000)
    core = x[np.abs(x) <= 1.5]
    assert core.std() == pytest.approx(truncnorm.std(-1.5, 1.5), abs=0.01)
    assert truncnorm.std(-1.5, 1.5) < 0.75
    _, sigma = fit_gaussian_core(x, 1.5, 0.0)
    assert sigma == pytest.approx(1.0, rel=0.10)


def test_core_fit_rejects_constant_and_sparse():
    # [TRIVIAL]
    with pytest.raises(ValidationError, match="core samples"):
        fit_gaussian_core(np.full(100, 3.0), 4.0)
    with pytest.raises(ValidationError, match="too few core samples"):
        fit_gaussian_core(np.linspace(-100, 100, 200), 1.0, 0.0)


# --- detachment ---------------------------------------------------------------------

def test_pure_gaussian_is_flagged():
    # [DERIVED] threshold falls back to d0 + 4 sigma
    for seed in range(20):
        x = np.random.default_rng(100 + seed).normal(size=10000)
        m = calibrate(x)
        if m.no_anomaly:
            assert m.d_th == pytest.approx(m.d0 + 4 * m.sigma_d)


def test_detachment_recovers_mixture_threshold():
    # [DERIVED] w_G = 0.95, lambda = 1, N = 20000
    for seed in range(20):
        x = mixture(np.random.default_rng(seed), 20000, w=0.95, lam=1.0)
        m = calibrate(x)
        assert not m.no_anomaly
        assert 2.4 <= m.d_th <= 3.6


def test_detachment_tiny_far_tail():
    # [DERIVED] d_th = 6 sigma, tail weight 0.005: found within one sigma
    for seed in range(10):
        x = mixture(np.random.default_rng(seed), 50000, w=0.995, t=6.0, lam=1.0)
        m = calibrate(x)
        assert m.no_anomaly or 5.0 <= m.d_th <= 7.0


def test_detachment_threshold_direct():
    x = np.random.default_rng(4).normal(size=20000)
    h = build_histogram(x, 80)
    assert detachment_threshold(h, 0.0, 1.0) == pytest.approx(4.0)
    y = np.concatenate([x, np.full(300, 3.0) + np.random.default_rng(5).uniform(0, 0.5, 300)])
    assert 2.5 <= detachment_threshold(build_histogram(y, 80), 0.0, 1.0) <= 3.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_equivariance(seed, a, b):
    # [DERIVED] every step works on histogram geometry, so the threshold (a bin
    # centre) maps exactly; the core moments can move by a sample that rounding
    # pushes across a core boundary, bounded here by 1% of sigma
    x = mixture(np.random.default_rng(seed), 5000, w=0.93, lam=1.5)
    m0, m1 = calibrate(x), calibrate(a * x + b)
    scale = max(1.0, abs(b), a)
    assert m1.d_th == pytest.approx(a * m0.d_th + b, abs=1e-8 * scale)
    assert m1.d0 == pytest.approx(a * m0.d0 + b, abs=1e-2 * a * m0.sigma_d + 1e-8 * scale)
    assert m1.sigma_d == pytest.approx(a * m0.sigma_d, rel=1e-2)
    assert m1.no_anomaly == m0.no_anomaly


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 400))
def test_monotone_tail_response(seed, extra):
    # [DERIVED] nested sets: more samples above d_th never raise the detachment point
    rng = np.random.default_rng(seed)
    x = mixture(rng, 10000, w=0.96, lam=1.0)
    m0 = calibrate(x, bins=120)
    add = rng.uniform(m0.d_th, x.max(), extra)  # keeps the histogram range
    m1 = calibrate(np.concatenate([x, add]), bins=120)
    assert m1.d_th <= m0.d_th + 1e-12


def test_false_positive_control():
    # [DERIVED] 200 seeds of pure N(0,1), N = 10000
    flags = [calibrate(np.random.default_rng(7000 + s).normal(size=10000)).no_anomaly for s in range(200)]
    assert np.mean(flags) >= 0.95


def test_two_sided_finds_negative_tail():
    rng = np.random.default_rng(6)
    x = -mixture(rng, 20000, w=0.95, lam=1.0)
    one, two = calibrate(x), calibrate(x, two_sided=True)
    assert two.two_sided and not two.no_anomaly
    assert 2.4 <= two.d_th - two.d0 <= 3.6
    assert one.no_anomaly or one.d_th - one.d0 > two.d_th - two.d0


# --- mixture fit ----------------------------------------------------------------------

def test_mixture_fit_recovers_parameters():
    # [DERIVED] (0.9, 0, 1, 3, 2), N = 50000: 10% relative, d0 absolute, d_th +-0.3
    for seed in range(5):
        m = fit_mixture(mixture(np.random.default_rng(seed), 50000))
        assert m.method == "mixture_fit" and not m.fallback
        assert m.w_G == pytest.approx(0.9, rel=0.1)
        assert abs(m.d0) <= 0.1
        assert m.sigma_d == pytest.approx(1.0, rel=0.1)
        assert m.lam == pytest.approx(2.0, rel=0.1)
        assert abs(m.d_th - 3.0) <= 0.3


def test_mixture_fit_pure_gaussian_falls_back():
    # [DERIVED] w_G -> 1 with the fallback flag
    m = fit_mixture(np.random.default_rng(9).normal(size=10000))
    assert m.w_G == 1.0 and m.fallback and m.no_anomaly


def test_mixture_fit_without_core_falls_back():
    # [TRIVIAL] fewer than 30 core samples
    x = np.concatenate([np.full(520, 1.0), np.linspace(50, 60, 10)])
    m = fit_mixture(x)
    assert m.fallback


def test_mixture_fit_needs_500_samples():
    with pytest.raises(ValidationError):
        fit_mixture(np.random.default_rng(0).normal(size=499))


def test_mixture_stays_within_two_sigma_of_detachment():
    for seed in range(5):
        x = mixture(np.random.default_rng(seed), 20000, w=0.9, lam=0.7)
        det = calibrate(x)
        m = fit_mixture(x, start=det)
        assert abs(m.d_th - det.d_th) <= 2 * det.sigma_d + 1e-12


# --- model ----------------------------------------------------------------------------

def test_fitted_density_integrates_to_one():
    x = mixture(np.random.default_rng(11), 50000)
    m = fit_mixture(x)
    assert m.d_th > m.d0
    grid = np.linspace(x.min(), x.max(), 200001)
    assert np.trapezoid(m.pdf(grid), grid) == pytest.approx(1.0, abs=0.02)
    assert np.all(m.pdf(grid) >= 0)


def test_histogram_fit_csv():
    x = mixture(np.random.default_rng(12), 5000)
    h = build_histogram(x, 50)
    m = calibrate(x, 50)
    lines = histogram_fit_csv(h, m).splitlines()
    assert lines[0] == "bin_center,empirical_density,fitted_density"
    assert len(lines) == 51
    assert isinstance(m, ThresholdModel) and m.to_dict()["d_th"] == m.d_th
