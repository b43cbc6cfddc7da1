"""Monte Carlo t filter for nonlinear models.

Samples are pushed through the state and measurement functions, then a t
density with prescribed dof is refitted to them by EM. The measurement
update conditions the fitted joint density of state and measurement in the
same way as the analytic t filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .distributions import as_rng, matrix_sqrt
from .exceptions import ScaleMatrixError
from .kalman import _solve_pd, symmetrize
from .student import TBelief

SAMPLING_MODES = ("joint", "independent")


@dataclass(frozen=True)
class NonlinearModel:
    """x[k+1] = f(x[k], v[k]),  y[k] = h(x[k], e[k]).

    ``f`` and ``h`` act on sample batches: ``f(x, v)`` receives arrays of
    shape (N, n) and (N, dim Q) and returns (N, n); ``h`` likewise returns
    (N, m). Noises are St(0, Q, gamma) and St(0, R, delta).
    """

    f: Callable
    h: Callable
    Q: np.ndarray
    R: np.ndarray
    gamma: float = math.inf
    delta: float = math.inf
    N: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.N < 100:
            raise ValueError("at least 100 samples are required")


@dataclass
class SampleSet:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("samples must form an (N, dim) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("samples contain non-finite entries")
        self.values = v

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class EMResult:
    mu: np.ndarray
    sigma: np.ndarray
    loglik: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    regularized: bool = False


def _t_loglik(r2: np.ndarray, logdet: float, d: int, nu: float) -> float:
    N = r2.size
    if math.isinf(nu):
        return float(-0.5 * (N * (d * math.log(2 * math.pi) + logdet) + r2.sum()))
    const = (gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu)
             - 0.5 * d * math.log(nu * math.pi))
    return float(N * (const - 0.5 * logdet)
                 - 0.5 * (nu + d) * np.log1p(r2 / nu).sum())


def em_fit_t(samples, nu: float, max_iters: int = 200, tol: float = 1e-8,
             full_output: bool = False):
    """Maximum-likelihood location and scale of a t density with fixed dof.

    Each iteration reweights the samples by ``(nu + d) / (nu + r2)``. A
    singular scale iterate is regularized with ``1e-9 * trace * I`` and the
    result flagged. Returns ``(mu, sigma)``, or an :class:`EMResult` with
    ``full_output``; its ``loglik`` holds the log-likelihood of each
    iterate before its M-step.
    """
    s = samples if isinstance(samples, SampleSet) else SampleSet(samples)
    X, N, d = s.values, s.N, s.dim
    if N <= d:
        raise ValueError("need more samples than dimensions")
    mu = X.mean(axis=0)
    sigma = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
    res = EMResult(mu, sigma)
    for it in range(max_iters):
        try:
            L = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            tr = float(np.trace(sigma))
            sigma = sigma + 1e-9 * (tr if tr > 0 else 1.0) * np.eye(d)
            res.regularized = True
            L = np.linalg.cholesky(sigma)
        dev = X - mu
        z = np.linalg.solve(L, dev.T)
        r2 = np.sum(z * z, axis=0)
        logdet = 2.0 * float(np.log(np.diag(L)).sum())
        res.loglik.append(_t_loglik(r2, logdet, d, nu))
        w = np.ones(N) if math.isinf(nu) else (nu + d) / (nu + r2)
        mu_new = (w @ X) / w.sum()
        dev = X - mu_new
        sigma_new = symmetrize((dev * w[:, None]).T @ dev / N)
        change = max(np.max(np.abs(mu_new - mu)), np.max(np.abs(sigma_new - sigma)))
        mu, sigma = mu_new, sigma_new
        res.iterations = it + 1
        if change < tol:
            res.converged = True
            break
    res.mu, res.sigma = mu, sigma
    if full_output:
        return res
    return mu, sigma


def _mixing(rng: np.random.Generator, nu: float, N: int) -> np.ndarray:
    if math.isinf(nu):
        return np.ones(N)
    return rng.gamma(0.5 * nu, 2.0 / nu, size=N)


def _draw_pair(rng, mean, P, nu_a, M, nu_b, N, sampling, nu_joint):
    """Samples of (x, w) with x ~ St(mean, P, .) and w ~ St(0, M, .).

    ``joint`` shares one mixing variable with dof ``nu_joint``, which draws
    from the joint t density assumed by the filter; ``independent`` uses
    separate mixing variables with the marginal dofs.
    """
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    Lp, Lm = matrix_sqrt(P), matrix_sqrt(M)
    zx = rng.standard_normal((N, P.shape[0]))
    zw = rng.standard_normal((N, M.shape[0]))
    if sampling == "joint":
        lam_x = lam_w = _mixing(rng, nu_joint, N)
    else:
        lam_x, lam_w = _mixing(rng, nu_a, N), _mixing(rng, nu_b, N)
    x = mean + (zx @ Lp.T) / np.sqrt(lam_x)[:, None]
    w = (zw @ Lm.T) / np.sqrt(lam_w)[:, None]
    return x, w


def mc_time_update(b: TBelief, m: NonlinearModel, eta_prime: Optional[float] = None,
                   seed=0, sampling: str = "joint") -> TBelief:
    """Propagate samples through ``f`` and refit with dof ``eta_prime``.

    ``eta_prime`` defaults to ``min(eta, gamma)``.
    """
    eta_p = min(b.eta, m.gamma) if eta_prime is None else eta_prime
    rng = as_rng(seed)
    x, v = _draw_pair(rng, b.xhat, b.P, b.eta, m.Q, m.gamma, m.N, sampling, eta_p)
    xn = np.asarray(m.f(x, v), dtype=float).reshape(m.N, -1)
    mu, sigma = em_fit_t(xn, eta_p)
    return TBelief(mu, sigma, eta_p)


def mc_measurement_update(pred: TBelief, y, m: NonlinearModel,
                          eta_dprime: Optional[float] = None, seed=0,
                          sampling: str = "joint", full_output: bool = False):
    """Fit a joint t to samples of (x, h(x, e)) and condition on ``y``.

    ``eta_dprime`` defaults to ``min(eta', delta)``. With ``full_output``
    the fitted joint blocks are returned too.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    eta_pp = min(pred.eta, m.delta) if eta_dprime is None else eta_dprime
    rng = as_rng(seed)
    x, e = _draw_pair(rng, pred.xhat, pred.P, pred.eta, m.R, m.delta, m.N,
                      sampling, eta_pp)
    ys = np.asarray(m.h(x, e), dtype=float).reshape(m.N, -1)
    n, dim_y = x.shape[1], ys.shape[1]
    if y.shape != (dim_y,):
        raise ValueError("measurement dimension does not match h")
    mu, sigma = em_fit_t(np.hstack([x, ys]), eta_pp)
    Sxx, Sxy, Syy = sigma[:n, :n], sigma[:n, n:], sigma[n:, n:]
    try:
        K = _solve_pd(Syy, Sxy.T).T
    except ScaleMatrixError:
        raise ScaleMatrixError("fitted measurement block S is singular") from None
    innov = y - mu[n:]
    r2 = float(innov @ _solve_pd(Syy, innov))
    P_dd = symmetrize(Sxx - K @ Syy @ K.T)
    if math.isinf(eta_pp):
        d, eta_new = 1.0, math.inf
    else:
        d = (eta_pp + r2) / (eta_pp + dim_y)
        eta_new = eta_pp + dim_y
    post = TBelief(mu[:n] + K @ innov, d * P_dd, eta_new)
    if full_output:
        return post, {"mu": mu, "sigma": sigma, "K": K, "S": Syy,
                      "r2": r2, "d_factor": d, "eta": eta_pp}
    return post


def mc_run(m: NonlinearModel, prior: TBelief, measurements: Sequence, seed=0,
           sampling: str = "joint") -> list[TBelief]:
    """Filter y[1..L]; each update draws from its own child seed."""
    children = np.random.SeedSequence(seed).spawn(2 * len(measurements))
    b, out = prior, [prior]
    for i, y in enumerate(measurements):
        pred = mc_time_update(b, m, seed=np.random.default_rng(children[2 * i]),
                              sampling=sampling)
        b = mc_measurement_update(pred, y, m,
                                  seed=np.random.default_rng(children[2 * i + 1]),
                                  sampling=sampling)
        out.append(b)
    return out
