"""Student's t filter and smoother for linear models with t noise.

Each step keeps a t belief (xhat, P, eta). The time update first reduces
the dof to ``min(eta, gamma)`` and the measurement update to
``min(eta', delta)``. Each reduction may rescale the matrices involved,
according to an :class:`ApproximationStrategy`. The measurement update
is the Kalman update followed by a scaling of P that depends on the
normalized innovation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .calibration import GAUSSIAN_DOF, ScaleFactorTable, moment_matching_factor
from .exceptions import ScaleMatrixError
from .kalman import (GaussianBelief, _solve_pd, kf_measurement_update,
                     kf_time_update, symmetrize)
from .models import LinearModel

PSD_TOL = 1e-10


class Variant(str, Enum):
    CONSERVATIVE = "conservative"
    KLD_SCALED = "kld"
    MOMENT_MATCHED = "moment"


@dataclass(frozen=True)
class ApproximationStrategy:
    """How matrices are rescaled when a joint dof replaces a marginal one.

    CONSERVATIVE keeps every matrix; KLD_SCALED multiplies by the tabulated
    KLD-optimal factor; MOMENT_MATCHED preserves the covariance.
    """

    variant: Variant = Variant.CONSERVATIVE
    table: Optional[ScaleFactorTable] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.KLD_SCALED and self.table is None:
            raise ValueError("KLD scaling needs a ScaleFactorTable")

    def factor(self, dim: int, nu: float, nu_prime: float) -> float:
        if nu == nu_prime or self.variant is Variant.CONSERVATIVE:
            return 1.0
        if self.variant is Variant.MOMENT_MATCHED:
            return moment_matching_factor(nu, nu_prime)
        src = GAUSSIAN_DOF if math.isinf(nu) else nu
        return self.table.lookup(dim, src, nu_prime)


CONSERVATIVE = ApproximationStrategy()


@dataclass
class TBelief:
    xhat: np.ndarray
    P: np.ndarray
    eta: float

    @property
    def cov(self) -> Optional[np.ndarray]:
        """Implied covariance, or None when eta <= 2."""
        if self.eta <= 2:
            return None
        if math.isinf(self.eta):
            return self.P.copy()
        return self.eta / (self.eta - 2.0) * self.P


@dataclass
class TDiagnostics:
    yhat: np.ndarray
    S: np.ndarray
    K: np.ndarray
    innovation: np.ndarray
    r2: float
    eta: float
    m: int
    d_factor: float
    P_dprime: np.ndarray
    c_P: float = 1.0
    c_R: float = 1.0


@dataclass
class TFilterRecord:
    """Everything the smoother needs about step k.

    ``P_prime`` and ``eta_prime`` describe the rescaled filtering matrix used
    to predict step k+1; they stay None for the final step.
    """

    k: int
    predicted: Optional[TBelief]
    filtered: TBelief
    diag: Optional[TDiagnostics] = None
    P_prime: Optional[np.ndarray] = None
    eta_prime: Optional[float] = None
    c_P: float = 1.0


def _psd(P: np.ndarray) -> np.ndarray:
    P = symmetrize(P)
    w, v = np.linalg.eigh(P)
    if w[0] >= 0:
        return P
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -PSD_TOL * scale:
        raise ScaleMatrixError(f"matrix lost positive semidefiniteness ({w[0]:.3e})")
    return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def _rank(M: np.ndarray) -> int:
    return max(1, int(np.linalg.matrix_rank(M)))


def tf_time_update(b: TBelief, m: LinearModel,
                   s: ApproximationStrategy = CONSERVATIVE, k: int = 0,
                   full_output: bool = False):
    """Predict from k to k+1.

    The filtering density and the process noise are merged into one joint t
    with dof ``min(eta, gamma)``; the prediction follows by linear
    transformation. With ``full_output`` a dict with the rescaled matrices
    and factors is returned as well.
    """
    if b.xhat.shape != (m.n,):
        raise ValueError("belief dimension does not match the model")
    Q = m.Q_at(k)
    eta_p = min(b.eta, m.gamma)
    c_P = s.factor(m.n, b.eta, eta_p)
    c_Q = s.factor(_rank(Q), m.gamma, eta_p)
    P_prime = c_P * b.P
    Q_prime = c_Q * Q
    pred = TBelief(m.F @ b.xhat, _psd(m.F @ P_prime @ m.F.T + Q_prime), eta_p)
    if full_output:
        return pred, {"P_prime": P_prime, "Q_prime": Q_prime,
                      "eta_prime": eta_p, "c_P": c_P, "c_Q": c_Q}
    return pred


def tf_measurement_update(b: TBelief, y, m: LinearModel,
                          s: ApproximationStrategy = CONSERVATIVE, k: int = 0):
    """Condition the predicted belief at step k on ``y``.

    Returns ``(belief, diagnostics)``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    R = m.R_at(k)
    eta_pp = min(b.eta, m.delta)
    c_P = s.factor(m.n, b.eta, eta_pp)
    c_R = s.factor(_rank(R), m.delta, eta_pp)
    P_prime = c_P * b.P
    H = m.H
    yhat = H @ b.xhat
    S = symmetrize(H @ P_prime @ H.T + c_R * R)
    K = _solve_pd(S, H @ P_prime).T
    innov = y - yhat
    r2 = float(innov @ _solve_pd(S, innov))
    P_dd = _psd(P_prime - K @ S @ K.T)
    dim_y = m.m
    if math.isinf(eta_pp):
        d, eta_new = 1.0, math.inf
    else:
        d = (eta_pp + r2) / (eta_pp + dim_y)
        eta_new = eta_pp + dim_y
    post = TBelief(b.xhat + K @ innov, _psd(d * P_dd), eta_new)
    diag = TDiagnostics(yhat, S, K, innov, r2, eta_pp, dim_y, d, P_dd, c_P, c_R)
    return post, diag


def innovation_factor(diag: TDiagnostics) -> float:
    """Measurement-dependent factor ``(r2 + eta) / (m + eta)``.

    ``eta`` is the joint dof used in the update; its mean under Gaussian
    innovations with the predicted S is exactly one.
    """
    if math.isinf(diag.eta):
        return 1.0
    return (diag.r2 + diag.eta) / (diag.m + diag.eta)


def _prior_belief(m: LinearModel) -> TBelief:
    mean, P0, eta0 = m.prior_moments()
    return TBelief(mean, P0, eta0)


def tf_run(m: LinearModel, measurements: Sequence,
           s: ApproximationStrategy = CONSERVATIVE) -> list[TFilterRecord]:
    """Run the t filter over y[1..L]; returns L + 1 records indexed by k."""
    b = _prior_belief(m)
    records = [TFilterRecord(0, None, b)]
    for k, y in enumerate(measurements, start=1):
        pred, info = tf_time_update(b, m, s, k - 1, full_output=True)
        prev = records[-1]
        prev.P_prime, prev.eta_prime, prev.c_P = (
            info["P_prime"], info["eta_prime"], info["c_P"])
        b, diag = tf_measurement_update(pred, y, m, s, k)
        records.append(TFilterRecord(k, pred, b, diag))
    return records


def simplistic_update(b: TBelief, y, m: LinearModel, k: int = 1) -> TBelief:
    """KF time and measurement update on (xhat, P) with eta passed through.

    This is the filter obtained by tying all latent mixing variables
    together; it ignores the heavy tails entirely.
    """
    g = GaussianBelief(b.xhat, b.P)
    pred = kf_time_update(g, m, k - 1)
    post, _ = kf_measurement_update(pred, y, m, k)
    return TBelief(post.xhat, post.P, b.eta)


def simplistic_run(m: LinearModel, measurements: Sequence) -> list[TBelief]:
    b = _prior_belief(m)
    out = [b]
    for k, y in enumerate(measurements, start=1):
        b = simplistic_update(b, y, m, k)
        out.append(b)
    return out


def ts_smooth(records: Sequence[TFilterRecord], m: LinearModel) -> list[TBelief]:
    """Backward pass of the t smoother.

    Same recursion as the RTS smoother, with the rescaled filtering matrix
    P'[k|k] in place of P[k|k]. The smoothed belief at k < L carries the dof
    eta'[k] of the joint density used in the forward prediction.
    """
    if not records:
        return []
    last = records[-1].filtered
    out = [None] * len(records)
    out[-1] = TBelief(last.xhat.copy(), last.P.copy(), last.eta)
    for i in range(len(records) - 2, -1, -1):
        rec, pred = records[i], records[i + 1].predicted
        Pp = rec.P_prime
        G = _solve_pd(pred.P, m.F @ Pp).T
        nxt = out[i + 1]
        xs = rec.filtered.xhat + G @ (nxt.xhat - pred.xhat)
        Ps = _psd(Pp + G @ (nxt.P - pred.P) @ G.T)
        out[i] = TBelief(xs, Ps, rec.eta_prime)
    return out
