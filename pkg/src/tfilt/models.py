"""Linear state-space model definitions shared by all estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import Gaussian, StudentT, _check_sym_psd


@dataclass(frozen=True)
class CovarianceSchedule:
    """Per-step overrides of the process and measurement noise matrices.

    ``Q[k]`` replaces the nominal Q in the transition from k to k+1 and
    ``R[k]`` replaces the nominal R for the measurement taken at k.
    """

    Q: dict = field(default_factory=dict)
    R: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("Q", "R"):
            table = {}
            for k, M in getattr(self, name).items():
                M = np.atleast_2d(np.asarray(M, dtype=float))
                _check_sym_psd(M, f"{name}[{k}]")
                table[int(k)] = M
            object.__setattr__(self, name, table)


@dataclass(frozen=True)
class LinearModel:
    """x[k+1] = F x[k] + v[k],  y[k] = H x[k] + e[k].

    ``Q`` and ``R`` are scale matrices of t noise with dofs ``gamma`` and
    ``delta``; Gaussian estimators read them as covariances and ignore the
    dofs. ``prior`` describes x[0].
    """

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    prior: StudentT | Gaussian
    gamma: float = math.inf
    delta: float = math.inf
    schedule: Optional[CovarianceSchedule] = None

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = F.shape[0], H.shape[0]
        if F.shape != (n, n) or H.shape != (m, n):
            raise ValueError(f"bad shapes F {F.shape}, H {H.shape}")
        if Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError(f"bad shapes Q {Q.shape}, R {R.shape}")
        _check_sym_psd(Q, "Q")
        _check_sym_psd(R, "R")
        if self.prior.dim != n:
            raise ValueError("prior dimension does not match F")
        if not (self.gamma > 0 and self.delta > 0):
            raise ValueError("noise degrees of freedom must be positive")
        for name, val in (("F", F), ("H", H), ("Q", Q), ("R", R)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def Q_at(self, k: int) -> np.ndarray:
        if self.schedule is not None and k in self.schedule.Q:
            return self.schedule.Q[k]
        return self.Q

    def R_at(self, k: int) -> np.ndarray:
        if self.schedule is not None and k in self.schedule.R:
            return self.schedule.R[k]
        return self.R

    def prior_moments(self) -> tuple[np.ndarray, np.ndarray, float]:
        """(mean, matrix, dof) of the prior; a Gaussian prior has dof inf."""
        if isinstance(self.prior, Gaussian):
            return np.array(self.prior.mean), np.array(self.prior.cov), math.inf
        return np.array(self.prior.mu), np.array(self.prior.sigma), self.prior.nu
