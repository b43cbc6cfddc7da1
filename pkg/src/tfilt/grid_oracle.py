"""Point-mass evaluation of the exact Bayesian recursions for scalar models.

Densities live on a fixed uniform grid. Prediction applies the full
transition kernel matrix, measurement updates multiply by the likelihood,
and smoothing runs the backward recursion that divides by the prediction.
Everything is renormalized to unit Riemann mass after each step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks
from scipy.special import gammaln

from .exceptions import GridError

LEAK_TOL = 1e-3
RATIO_FLOOR = 1e-300
BOUNDARY_TOL = 1e-6


@dataclass
class GridDensity:
    """Density values ``pdf`` on the uniform grid ``x``."""

    x: np.ndarray
    pdf: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.pdf = np.asarray(self.pdf, dtype=float)
        if self.x.shape != self.pdf.shape or self.x.ndim != 1 or self.x.size < 2:
            raise ValueError("grid and pdf must be equal-length 1-D arrays")
        if np.any(self.pdf < 0):
            raise ValueError("negative density values")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> float:
        return float(self.pdf.sum() * self.dx)

    def normalized(self) -> "GridDensity":
        return GridDensity(self.x, self.pdf / self.mass())

    def boundary_mass(self) -> float:
        return float((self.pdf[0] + self.pdf[-1]) * self.dx)

    @classmethod
    def from_logpdf(cls, x, logpdf: Callable) -> "GridDensity":
        x = np.asarray(x, dtype=float)
        lp = np.asarray(logpdf(x), dtype=float)
        return cls(x, np.exp(lp - lp.max())).normalized()


def make_grid(x_min: float, x_max: float, count: int) -> np.ndarray:
    return np.linspace(x_min, x_max, count)


def scalar_t_logpdf(z, scale: float, nu: float):
    """log St(z; 0, scale, nu) elementwise; ``nu = inf`` gives the Gaussian."""
    z = np.asarray(z, dtype=float)
    if math.isinf(nu):
        return -0.5 * (math.log(2 * math.pi * scale) + z * z / scale)
    return (gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi * scale)
            - 0.5 * (nu + 1) * np.log1p(z * z / (scale * nu)))


def additive_transition(F: float, scale: float, nu: float = math.inf):
    """p(x' | x) for x' = F x + v with v ~ St(0, scale, nu)."""
    return lambda xn, x: np.exp(scalar_t_logpdf(xn - F * x, scale, nu))


def additive_likelihood(H: float, scale: float, nu: float = math.inf):
    """p(y | x) for y = H x + e with e ~ St(0, scale, nu)."""
    return lambda y, x: np.exp(scalar_t_logpdf(y - H * x, scale, nu))


def transition_kernel(x: np.ndarray, transition: Callable) -> np.ndarray:
    """Matrix ``K[j, i] = p(x_j | x_i)``."""
    return transition(x[:, None], x[None, :])


def grid_predict(d: GridDensity, transition) -> GridDensity:
    """Chapman-Kolmogorov step.

    ``transition`` is either a callable ``p(x_next, x)`` or a precomputed
    kernel matrix from :func:`transition_kernel`. Raises GridError when more
    than 1e-3 of the mass leaves the grid.
    """
    K = transition if isinstance(transition, np.ndarray) else \
        transition_kernel(d.x, transition)
    pred = K @ d.pdf * d.dx
    mass = pred.sum() * d.dx
    if 1.0 - mass > LEAK_TOL * d.mass():
        raise GridError(f"grid too small: {1.0 - mass:.2e} of the mass left the grid")
    return GridDensity(d.x, pred / mass)


def grid_update(d: GridDensity, likelihood: Callable, y) -> tuple[GridDensity, float]:
    """Multiply by ``likelihood(y, x)`` and renormalize; returns (posterior, evidence)."""
    lik = np.broadcast_to(np.asarray(likelihood(y, d.x), dtype=float), d.x.shape)
    post = lik * d.pdf
    evidence = float(post.sum() * d.dx)
    if not evidence > 0 or not math.isfinite(evidence):
        raise GridError("zero evidence: measurement incompatible with the grid")
    return GridDensity(d.x, post / evidence), evidence


def grid_smooth(filtered: Sequence[GridDensity],
                predicted: Sequence[Optional[GridDensity]],
                transition) -> list[GridDensity]:
    """Backward recursion from the last filtering density.

    ``predicted[k]`` is the one-step prediction of step k made from
    ``filtered[k-1]`` (``predicted[0]`` is unused). The prediction in the
    denominator is floored at 1e-300; a warning is issued when the floor
    matters on more than 1% of the cells.
    """
    if not filtered:
        return []
    x = filtered[0].x
    K = transition if isinstance(transition, np.ndarray) else \
        transition_kernel(x, transition)
    dx = filtered[0].dx
    out = [None] * len(filtered)
    out[-1] = GridDensity(x, filtered[-1].pdf.copy())
    for k in range(len(filtered) - 2, -1, -1):
        pred = predicted[k + 1].pdf
        nxt = out[k + 1].pdf
        floored = (pred < RATIO_FLOOR) & (nxt > 0)
        if floored.mean() > 0.01:
            warnings.warn("smoother ill-conditioned", RuntimeWarning, stacklevel=2)
        ratio = nxt / np.maximum(pred, RATIO_FLOOR)
        back = K.T @ ratio * dx
        out[k] = GridDensity(x, filtered[k].pdf * back).normalized()
    return out


def grid_moments(d: GridDensity) -> tuple[float, float]:
    w = d.pdf * d.dx
    total = w.sum()
    mean = float((w * d.x).sum() / total)
    var = float((w * (d.x - mean) ** 2).sum() / total)
    return mean, var


def count_modes(d: GridDensity, rel_prominence: float = 1e-2) -> int:
    """Number of local maxima whose prominence exceeds a fraction of the peak."""
    f = np.concatenate(([0.0], d.pdf, [0.0]))
    peaks, _ = find_peaks(f, prominence=rel_prominence * d.pdf.max())
    return int(peaks.size)


@dataclass
class GridRun:
    """Prediction, filtering and smoothing densities for k = 0..L."""

    predicted: list
    filtered: list
    smoothed: list
    evidence: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return self.filtered[0].x


def grid_run(x: np.ndarray, prior_logpdf: Callable, transition: Callable,
             likelihood: Callable, measurements: Sequence,
             smooth: bool = True) -> GridRun:
    """Exact filter (and smoother) over y[1..L] on a fixed grid."""
    K = transition_kernel(x, transition)
    f = GridDensity.from_logpdf(x, prior_logpdf)
    predicted, filtered, evidence = [None], [f], []
    for y in measurements:
        p = grid_predict(f, K)
        f, ev = grid_update(p, likelihood, y)
        predicted.append(p)
        filtered.append(f)
        evidence.append(ev)
    smoothed = grid_smooth(filtered, predicted, K) if smooth else []
    return GridRun(predicted, filtered, smoothed, evidence)


def grid_run_auto(x_min: float, x_max: float, count: int, prior_logpdf,
                  transition, likelihood, measurements, smooth: bool = True,
                  max_widen: int = 4) -> GridRun:
    """:func:`grid_run`, widening the grid by half on each side while the
    mass in the outermost cells of any density exceeds 1e-6.

    Widening keeps the cell width, so the point count grows.
    """
    dx = (x_max - x_min) / (count - 1)
    for _ in range(max_widen + 1):
        x = make_grid(x_min, x_max, count)
        run = grid_run(x, prior_logpdf, transition, likelihood, measurements, smooth)
        dens = run.filtered + [p for p in run.predicted if p is not None] + run.smoothed
        if max(d.boundary_mass() for d in dens) <= BOUNDARY_TOL:
            return run
        half = 0.25 * (x_max - x_min)
        x_min, x_max = x_min - half, x_max + half
        count = int(round((x_max - x_min) / dx)) + 1
    return run
