"""Kalman filter and Rauch-Tung-Striebel smoother baselines.

Passing a model with a CovarianceSchedule gives the clairvoyant variant;
there is no separate code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .exceptions import ScaleMatrixError
from .models import LinearModel


@dataclass
class GaussianBelief:
    xhat: np.ndarray
    P: np.ndarray


@dataclass
class KFDiagnostics:
    yhat: np.ndarray
    S: np.ndarray
    K: np.ndarray
    innovation: np.ndarray
    nis: float
    gated: bool = False


@dataclass
class KFStep:
    """One step of a forward pass. ``predicted`` is None at k = 0."""

    k: int
    predicted: Optional[GaussianBelief]
    filtered: GaussianBelief
    diag: Optional[KFDiagnostics] = None


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _solve_pd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """S^-1 B for symmetric positive definite S."""
    try:
        c = linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise ScaleMatrixError("innovation matrix S is singular") from None
    return linalg.cho_solve(c, B, check_finite=False)


def kf_time_update(b: GaussianBelief, m: LinearModel, k: int = 0) -> GaussianBelief:
    """Predict from step k to k+1 using the (possibly scheduled) Q at k."""
    if b.xhat.shape != (m.n,):
        raise ValueError("belief dimension does not match the model")
    F = m.F
    return GaussianBelief(F @ b.xhat, symmetrize(F @ b.P @ F.T + m.Q_at(k)))


def kf_measurement_update(b: GaussianBelief, y, m: LinearModel, k: int = 0,
                          gate: Optional[float] = None):
    """Condition the prediction at step k on measurement ``y``.

    ``gate`` is an optional chi-squared acceptance probability; a
    measurement whose normalized innovation exceeds the corresponding
    quantile is discarded and the prediction returned unchanged.

    Returns ``(belief, diagnostics)``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    H = m.H
    yhat = H @ b.xhat
    S = symmetrize(H @ b.P @ H.T + m.R_at(k))
    PHt = b.P @ H.T
    K = _solve_pd(S, PHt.T).T
    innov = y - yhat
    nis = float(innov @ _solve_pd(S, innov))
    diag = KFDiagnostics(yhat, S, K, innov, nis)
    if gate is not None and nis > chi2.ppf(gate, m.m):
        diag.gated = True
        return GaussianBelief(b.xhat.copy(), b.P.copy()), diag
    xhat = b.xhat + K @ innov
    P = symmetrize(b.P - K @ S @ K.T)
    return GaussianBelief(xhat, P), diag


def joseph_covariance(P: np.ndarray, K: np.ndarray, H: np.ndarray,
                      R: np.ndarray) -> np.ndarray:
    """Joseph-stabilized form (I - KH) P (I - KH)^T + K R K^T."""
    A = np.eye(P.shape[0]) - K @ H
    return symmetrize(A @ P @ A.T + K @ R @ K.T)


def kf_run(m: LinearModel, measurements: Sequence, gate: Optional[float] = None
           ) -> list[KFStep]:
    """Filter measurements y[1..L] starting from the prior on x[0].

    The returned list has L + 1 entries indexed by k.
    """
    mean, P0, _ = m.prior_moments()
    b = GaussianBelief(mean, P0)
    steps = [KFStep(0, None, b)]
    for k, y in enumerate(measurements, start=1):
        pred = kf_time_update(b, m, k - 1)
        b, diag = kf_measurement_update(pred, y, m, k, gate=gate)
        steps.append(KFStep(k, pred, b, diag))
    return steps


def rts_smooth(steps: Sequence[KFStep], m: LinearModel) -> list[GaussianBelief]:
    """Backward pass over a completed forward pass.

    Uses the smoothing gain G = P[k|k] F^T P[k+1|k]^-1 and starts from the
    last filtered belief.
    """
    if not steps:
        return []
    out = [None] * len(steps)
    last = steps[-1].filtered
    out[-1] = GaussianBelief(last.xhat.copy(), last.P.copy())
    for i in range(len(steps) - 2, -1, -1):
        filt, pred = steps[i].filtered, steps[i + 1].predicted
        G = _solve_pd(pred.P, m.F @ filt.P).T
        nxt = out[i + 1]
        xs = filt.xhat + G @ (nxt.xhat - pred.xhat)
        Ps = symmetrize(filt.P + G @ (nxt.P - pred.P) @ G.T)
        out[i] = GaussianBelief(xs, Ps)
    return out
