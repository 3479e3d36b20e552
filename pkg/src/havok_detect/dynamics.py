"""Linear propagator with residual forcing on the leading modes, and the decision signal.

The first ``r-1`` mode series form the state ``s`` and the ``r``-th is the
scalar forcing ``f``. The model is fitted in discrete time,
``s[k+1] = A s[k] + B f[k]``, which is exact for sampled linear systems and
needs no derivative estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .series import NumericalError, TimeSeries, ValidationError


@dataclass(frozen=True, eq=False)
class LinearModel:
    A: np.ndarray  # (r-1, r-1)
    B: np.ndarray  # (r-1, 1)
    order_r: int
    sample_period: float
    train_mse: float

    @property
    def residual_index(self) -> int:
        return self.order_r - 1

    def continuous_generator(self) -> Optional[np.ndarray]:
        """log(A) / T_s when A has only positive real eigenvalues, else None."""
        eig = np.linalg.eigvals(self.A)
        if np.any(np.abs(eig.imag) > 1e-12) or np.any(eig.real <= 0):
            return None
        if self.A.shape == (1, 1):
            return np.log(self.A) / self.sample_period
        from scipy.linalg import logm

        return np.real(logm(self.A)) / self.sample_period


@dataclass(frozen=True, eq=False)
class Reconstruction:
    states: np.ndarray  # (r-1, n)
    max_amplitude: float

    @property
    def diverged(self) -> bool:
        return not np.isfinite(self.max_amplitude)


@dataclass(frozen=True, eq=False)
class DecisionTrace:
    v: TimeSeries
    r_force: TimeSeries
    d: TimeSeries
    hilbert_applied: bool

    def __post_init__(self):
        n, ts = len(self.v), self.v.sample_period
        for s in (self.r_force, self.d):
            if len(s) != n or s.sample_period != ts:
                raise ValidationError("trace series must share length and sample_period")

    def to_csv(self) -> str:
        rows = ["v,r_force,d"]
        for a, b, c in zip(self.v.samples, self.r_force.samples, self.d.samples):
            rows.append(f"{a:.17g},{b:.17g},{c:.17g}")
        return "\n".join(rows) + "\n"


def _as_rows(traj) -> np.ndarray:
    rows = [t.samples if isinstance(t, TimeSeries) else np.asarray(t, dtype=float) for t in traj]
    return np.vstack(rows)


def _regressors(X: np.ndarray):
    s, f = X[:-1], X[-1]
    return np.vstack([s[:, :-1], f[None, :-1]]), s[:, 1:]


def fit_linear_model(traj: Sequence, sample_period: Optional[float] = None) -> LinearModel:
    """Least-squares fit of ``s[k+1] = A s[k] + B f[k]``.

    A forcing series that is identically zero gets ``B = 0``; a degenerate
    (zero or collinear) state mode raises :class:`NumericalError`.
    """
    X = _as_rows(traj)
    r = X.shape[0]
    n = X.shape[1]
    if r < 2:
        raise ValidationError("need at least two mode series (state + forcing)")
    if n < 2 * (r - 1) + 2:
        raise ValidationError(f"series of length {n} too short for order r={r}")
    if sample_period is None:
        sample_period = traj[0].sample_period if isinstance(traj[0], TimeSeries) else 1.0

    reg, target = _regressors(X)
    for i in range(r - 1):
        if not np.any(reg[i] != 0) or np.linalg.matrix_rank(reg[: i + 1].T) < i + 1:
            raise NumericalError(f"degenerate mode v{i + 1}: state regressor is zero or collinear")

    use_force = np.any(reg[-1] != 0)
    if use_force and np.linalg.matrix_rank(reg.T) < r:
        use_force = False  # forcing collinear with the state: leave it out
    design = reg if use_force else reg[:-1]
    coef, *_ = np.linalg.lstsq(design.T, target.T, rcond=None)
    coef = coef.T  # (r-1, r or r-1)
    A = coef[:, : r - 1].copy()
    B = coef[:, r - 1:].copy() if use_force else np.zeros((r - 1, 1))
    pred = A @ reg[:-1] + B @ reg[-1:]
    mse = float(np.mean((target - pred) ** 2))
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.isfinite(mse)):
        raise NumericalError("linear model fit produced non-finite coefficients")
    return LinearModel(A, B, r, float(sample_period), mse)


def one_step_predict(model: LinearModel, traj: Sequence) -> np.ndarray:
    """One-step-ahead predictions of the state, shape (r-1, n-1)."""
    reg, _ = _regressors(_as_rows(traj))
    return model.A @ reg[:-1] + model.B @ reg[-1:]


def reconstruct(model: LinearModel, r_force, s0) -> Reconstruction:
    """Free-run simulation ``v[k+1] = A v[k] + B f[k]`` from ``s0``, same length as the forcing."""
    f = r_force.samples if isinstance(r_force, TimeSeries) else np.asarray(r_force, dtype=float)
    if f.size < 1:
        raise ValidationError("forcing must have at least one sample")
    k = model.order_r - 1
    s = np.asarray(s0, dtype=float).reshape(-1)
    if s.size != k:
        raise ValidationError(f"initial state must have {k} entries, got {s.size}")
    out = np.empty((k, f.size))
    out[:, 0] = s
    A, b = model.A, model.B[:, 0]
    with np.errstate(over="ignore", invalid="ignore"):
        if k == 1:
            a, bb = A[0, 0], b[0]
            x = s[0]
            row = out[0]
            for i in range(1, f.size):
                x = a * x + bb * f[i - 1]
                row[i] = x
        else:
            for i in range(1, f.size):
                out[:, i] = A @ out[:, i - 1] + b * f[i - 1]
        amp = float(np.max(np.abs(out)))
    if not np.isfinite(amp):
        amp = float("inf")
    return Reconstruction(out, amp)


def reconstruction_nmse(model: LinearModel, traj: Sequence, horizon: Optional[int] = None) -> float:
    """||v_hat - v||^2 / ||v||^2 for free runs driven by the observed forcing.

    With ``horizon`` set, the run is restarted from the observed state every
    ``horizon`` samples; otherwise it is a single run from the first sample.
    """
    X = _as_rows(traj)
    states, force = X[:-1], X[-1]
    denom = float(np.sum(states ** 2))
    if denom == 0:
        return float("inf")
    if horizon is None or horizon >= force.size:
        rec = reconstruct(model, force, states[:, 0])
        if rec.diverged:
            return float("inf")
        est = rec.states
    else:
        est = _anchored_runs(model, states, force, int(horizon))
    with np.errstate(over="ignore", invalid="ignore"):
        err = float(np.sum((est - states) ** 2)) / denom
    return err if np.isfinite(err) else float("inf")


def _anchored_runs(model: LinearModel, states: np.ndarray, force: np.ndarray, horizon: int):
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    k, n = states.shape
    starts = np.arange(0, n, horizon)
    est = np.empty_like(states)
    cur = states[:, starts].copy()  # (k, blocks), every block advanced in lockstep
    est[:, starts] = cur
    b = model.B[:, :1]
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, horizon):
            idx = starts + j
            live = idx < n
            if not np.any(live):
                break
            cur = model.A @ cur + b * force[np.minimum(idx - 1, n - 1)][None, :]
            est[:, idx[live]] = cur[:, live]
    return est


def hilbert_envelope(x) -> TimeSeries:
    """Magnitude of the analytic signal of the mean-removed input.

    Built in the frequency domain for any length: negative frequencies are
    zeroed, positive ones doubled, DC and Nyquist left as is.
    """
    vals = x.samples if isinstance(x, TimeSeries) else np.asarray(x, dtype=float)
    n = vals.size
    if n < 8:
        raise ValidationError("Hilbert envelope needs at least 8 samples")
    spec = np.fft.fft(vals - vals.mean())
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1: n // 2] = 2.0
    else:
        h[1: (n + 1) // 2] = 2.0
    env = np.abs(np.fft.ifft(spec * h))
    return x.with_samples(env) if isinstance(x, TimeSeries) else env


def orient_modes(traj: Sequence) -> list:
    """Flip each mode series so its third central moment is nonnegative.

    SVD signs are arbitrary; this puts rare large excursions on the positive
    side, which is where the one-sided threshold looks for them.
    """
    out = []
    for t in traj:
        x = t.samples if isinstance(t, TimeSeries) else np.asarray(t, dtype=float)
        c = x - x.mean()
        flip = float(np.dot(c * c, c)) < 0
        if isinstance(t, TimeSeries):
            out.append(t.with_samples(-x) if flip else t)
        else:
            out.append(-x if flip else x)
    return out


def decision_signal(traj: Sequence, model: Optional[LinearModel] = None,
                    use_hilbert: bool = False) -> DecisionTrace:
    """``d = v1 + v_r``, or the analytic envelope of that sum when ``use_hilbert``."""
    traj = list(traj)
    if len(traj) < 2:
        raise ValidationError("need at least two mode series")
    if model is not None and model.order_r != len(traj):
        raise ValidationError("model order does not match trajectory")
    v, rf = traj[0], traj[-1]
    if not isinstance(v, TimeSeries):
        v, rf = TimeSeries(v), TimeSeries(rf)
    total = v.samples + rf.samples
    if use_hilbert:
        d = hilbert_envelope(v.with_samples(total))
    else:
        d = v.with_samples(total)
    return DecisionTrace(v, rf, d, bool(use_hilbert))
