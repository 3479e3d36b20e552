"""Time-feature Hankel embedding and its singular value decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .series import FeatureBank, NumericalError, TimeSeries, ValidationError


@dataclass(frozen=True, eq=False)
class HankelMatrix:
    """Feature-major delay matrix: row ``i*M + j``, column ``k`` holds ``feature_i[k + j]``."""

    entries: np.ndarray
    memory_M: int
    feature_count: int
    sample_period: float = 1.0
    start_time: float = 0.0

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True, eq=False)
class ModeDecomposition:
    """Thin SVD ``H = U @ diag(sigma) @ V.T`` of a Hankel matrix."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    memory_M: int
    order_r: Optional[int] = None
    sample_period: float = 1.0
    start_time: float = 0.0

    @property
    def n_modes(self) -> int:
        return self.sigma.size

    def reconstruct(self, k: Optional[int] = None) -> np.ndarray:
        k = self.n_modes if k is None else k
        return (self.U[:, :k] * self.sigma[:k]) @ self.V[:, :k].T


def build_hankel(bank, M: int) -> HankelMatrix:
    """Stack ``M`` delayed copies of every feature into an ``(F*M, N-M+1)`` matrix.

    ``bank`` is a :class:`FeatureBank` or a plain ``(F, N)`` array.
    """
    if isinstance(bank, FeatureBank):
        X = bank.matrix()
        ts, t0 = bank.sample_period, bank.features[0].start_time
    else:
        X = np.atleast_2d(np.asarray(bank, dtype=float))
        ts, t0 = 1.0, 0.0
    F, N = X.shape
    M = int(M)
    if M < 1:
        raise ValidationError(f"memory M must be >= 1, got {M}")
    if F * M >= N - M + 1:
        raise ValidationError(
            f"M={M} too large for N={N}: {F * M} rows need fewer than {N - M + 1} columns")
    # windows[i, k, j] = X[i, k + j]
    windows = sliding_window_view(X, M, axis=1)
    entries = np.ascontiguousarray(windows.transpose(0, 2, 1).reshape(F * M, N - M + 1))
    entries.setflags(write=False)
    return HankelMatrix(entries, M, F, ts, t0)


def decompose(h: HankelMatrix, order_r: Optional[int] = None) -> ModeDecomposition:
    """Thin SVD with a fixed sign convention (largest-|.| entry of each U column is positive)."""
    A = h.entries
    if not np.all(np.isfinite(A)):
        raise NumericalError("Hankel matrix has non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(s)) and np.all(np.isfinite(Vt))):
        raise NumericalError("SVD produced non-finite factors")
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = Vt.T * signs
    return ModeDecomposition(U, s, V, h.memory_M, order_r, h.sample_period, h.start_time)


def dominance_ratio(d: ModeDecomposition) -> float:
    """sigma_1 / sigma_2; ``inf`` when the second value is numerically zero."""
    s = d.sigma
    if s.size < 2:
        raise ValidationError("dominance ratio needs at least two singular values")
    tiny = np.finfo(float).eps * max(d.U.shape[0], d.V.shape[0]) * s[0]
    if s[1] <= tiny:
        return float("inf")
    return float(s[0] / s[1])


def alignment_offset(M: int) -> int:
    """Index shift mapping trajectory column ``k`` to the original sample ``k + M//2``."""
    return int(M) // 2


def trajectory(d: ModeDecomposition, r: int, scaled: bool = True) -> List[TimeSeries]:
    """The first ``r`` right singular vectors as series (times sigma_i when ``scaled``).

    Column ``k`` sits at the centre of its delay window, so the returned series
    start ``M//2`` samples after the source series.
    """
    if not 1 <= r <= d.n_modes:
        raise ValidationError(f"r={r} outside 1..{d.n_modes}")
    t0 = d.start_time + alignment_offset(d.memory_M) * d.sample_period
    out = []
    for i in range(r):
        v = d.V[:, i] * d.sigma[i] if scaled else d.V[:, i]
        out.append(TimeSeries(v, d.sample_period, t0))
    return out


def spectrum_csv(d: ModeDecomposition) -> str:
    """Singular values, one per line."""
    return "".join(f"{s:.17g}\n" for s in d.sigma)
