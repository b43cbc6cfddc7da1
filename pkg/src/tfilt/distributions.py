"""Multivariate Student's t and elliptically contoured distributions.

The t density is parameterized by a mean ``mu``, a scale matrix ``sigma``
and degrees of freedom ``nu``. The scale matrix is not the covariance;
for ``nu > 2`` the covariance is ``nu / (nu - 2) * sigma``.

All evaluations happen in the log domain. Values are immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .exceptions import MomentError, ScaleMatrixError

SYM_RTOL = 1e-12
PSD_RTOL = 1e-10


def as_rng(seed) -> np.random.Generator:
    """Return ``seed`` if it already is a Generator, else seed a new one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_sym_psd(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    if m.size and np.linalg.eigvalsh(m)[0] < -PSD_RTOL * scale:
        raise ValueError(f"{name} is not positive semidefinite")


def _chol(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ScaleMatrixError("scale matrix not invertible") from None


def _maha(x: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    # squared Mahalanobis radius for one point (n,) or a batch (N, n)
    dev = np.atleast_2d(x) - mu
    z = np.linalg.solve(chol, dev.T)
    return np.sum(z * z, axis=0)


@dataclass(frozen=True)
class StudentT:
    """Multivariate t density St(mu, sigma, nu)."""

    mu: np.ndarray
    sigma: np.ndarray
    nu: float

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mu))
        sigma = _frozen(np.atleast_2d(self.sigma))
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ValueError(
                f"dimension mismatch: mu {mu.shape}, sigma {sigma.shape}")
        _check_sym_psd(sigma, "sigma")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.mu.size

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.ravel().tolist(),
                "nu": self.nu}

    @classmethod
    def from_dict(cls, d: dict) -> "StudentT":
        mu = np.atleast_1d(np.asarray(d["mu"], dtype=float))
        sigma = np.asarray(d["sigma"], dtype=float).reshape(mu.size, mu.size)
        return cls(mu, sigma, d["nu"])


@dataclass(frozen=True)
class Gaussian:
    """Gaussian density N(mean, cov), the nu -> infinity limit of StudentT."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(np.atleast_1d(self.mean))
        cov = _frozen(np.atleast_2d(self.cov))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("dimension mismatch between mean and cov")
        _check_sym_psd(cov, "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def t_logpdf(d: StudentT, x) -> float | np.ndarray:
    """Log density of ``d`` at ``x``.

    ``x`` may be a single point of shape ``(n,)`` or a batch ``(N, n)``.
    Raises ScaleMatrixError when ``sigma`` is singular.
    """
    x = np.asarray(x, dtype=float)
    n, nu = d.dim, d.nu
    if x.shape[-1:] != (n,) and not (n == 1 and x.ndim <= 1):
        raise ValueError(f"point has wrong dimension for n={n}")
    chol = _chol(d.sigma)
    batch = x.ndim == 2 or (n == 1 and x.ndim == 1 and x.size > 1)
    pts = x.reshape(-1, n)
    r2 = _maha(pts, d.mu, chol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = (gammaln(0.5 * (nu + n)) - gammaln(0.5 * nu)
           - 0.5 * n * math.log(nu * math.pi) - 0.5 * logdet
           - 0.5 * (nu + n) * np.log1p(r2 / nu))
    return out if batch else float(out[0])


def gaussian_logpdf(g: Gaussian, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    n = g.dim
    chol = _chol(g.cov)
    batch = x.ndim == 2 or (n == 1 and x.ndim == 1 and x.size > 1)
    r2 = _maha(x.reshape(-1, n), g.mean, chol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (n * math.log(2 * math.pi) + logdet + r2)
    return out if batch else float(out[0])


def matrix_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, falling back to a clipped eigen-root for PSD input."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(sigma)
        return v * np.sqrt(np.clip(w, 0.0, None))


def t_sample(d: StudentT, seed, count: int) -> np.ndarray:
    """Draw ``count`` samples as ``mu + L z / sqrt(lam)``, lam ~ Gamma(nu/2, rate nu/2).

    Returns an array of shape ``(count, n)``.
    """
    rng = as_rng(seed)
    L = matrix_sqrt(d.sigma)
    lam = rng.gamma(0.5 * d.nu, 2.0 / d.nu, size=count)
    z = rng.standard_normal((count, d.dim))
    return d.mu + (z @ L.T) / np.sqrt(lam)[:, None]


def t_covariance(d: StudentT | Gaussian) -> Optional[np.ndarray]:
    """Covariance ``nu/(nu-2) * sigma``; ``None`` when it does not exist (nu <= 2)."""
    if isinstance(d, Gaussian):
        return np.array(d.cov)
    if d.nu <= 2:
        return None
    return d.nu / (d.nu - 2.0) * np.array(d.sigma)


def t_linear_transform(d: StudentT, A, b=None) -> StudentT:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != d.dim:
        raise ValueError(f"A has {A.shape[1]} columns, expected {d.dim}")
    b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, float))
    if b.shape != (A.shape[0],):
        raise ValueError("offset length does not match rows of A")
    S = A @ d.sigma @ A.T
    return StudentT(A @ d.mu + b, 0.5 * (S + S.T), d.nu)


@dataclass(frozen=True)
class BlockPartition:
    """Split of a joint t vector into leading block 1 (size n1) and block 2.

    Derived quantities follow the usual partitioned-Gaussian notation:
    ``gain = S12 S2^-1`` and ``schur = S1 - gain S2 gain^T``.
    """

    dist: StudentT
    n1: int

    def __post_init__(self):
        if not 0 <= self.n1 <= self.dist.dim:
            raise ValueError(
                f"invalid block sizes ({self.n1}, {self.dist.dim - self.n1})")

    @property
    def n2(self) -> int:
        return self.dist.dim - self.n1

    @property
    def sigma1(self):
        return self.dist.sigma[:self.n1, :self.n1]

    @property
    def sigma12(self):
        return self.dist.sigma[:self.n1, self.n1:]

    @property
    def sigma2(self):
        return self.dist.sigma[self.n1:, self.n1:]

    @cached_property
    def gain(self) -> np.ndarray:
        if self.n2 == 0:
            return np.zeros((self.n1, 0))
        chol = _chol(self.sigma2)
        # S12 S2^-1 via two triangular solves
        tmp = np.linalg.solve(chol, self.sigma12.T)
        return np.linalg.solve(chol.T, tmp).T

    @cached_property
    def schur(self) -> np.ndarray:
        s = self.sigma1 - self.gain @ self.sigma2 @ self.gain.T
        return 0.5 * (s + s.T)

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[:self.n1], x[self.n1:]


def t_marginal(p: BlockPartition, block: int) -> StudentT:
    d = p.dist
    if block == 1:
        return StudentT(d.mu[:p.n1], p.sigma1, d.nu)
    if block == 2:
        return StudentT(d.mu[p.n1:], p.sigma2, d.nu)
    raise ValueError(f"block must be 1 or 2, got {block}")


def t_conditional(p: BlockPartition, x2, full_output: bool = False):
    """Density of block 1 given block 2 equals ``x2``.

    The mean and unscaled matrix match the Gaussian conditional; the matrix
    is then scaled by ``(nu + r2) / (nu + n2)`` where ``r2`` is the squared
    Mahalanobis distance of ``x2`` under the block-2 marginal, and the
    degrees of freedom grow by ``n2``.

    With ``full_output=True`` a dict holding ``gain``, ``schur`` and
    ``factor`` is returned as a second value.
    """
    d = p.dist
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x2.shape != (p.n2,):
        raise ValueError(f"x2 must have length {p.n2}")
    mu1, mu2 = p.split(d.mu)
    resid = x2 - mu2
    if p.n2:
        r2 = float(_maha(x2, mu2, _chol(p.sigma2))[0])
    else:
        r2 = 0.0
    factor = (d.nu + r2) / (d.nu + p.n2)
    cond = StudentT(mu1 + p.gain @ resid, factor * p.schur, d.nu + p.n2)
    if full_output:
        return cond, {"gain": p.gain, "schur": p.schur, "factor": factor}
    return cond


def quadratic_form_split(p: BlockPartition, x) -> tuple[float, float]:
    """Decompose ``(x-mu)^T S^-1 (x-mu)`` into conditional and marginal terms.

    Returns ``(q1, q2)`` with ``q1`` the block-1 form around the conditional
    mean under the Schur complement and ``q2`` the block-2 marginal form.
    """
    d = p.dist
    x1, x2 = p.split(x)
    mu1, mu2 = p.split(d.mu)
    mu12 = mu1 + p.gain @ (x2 - mu2)
    q1 = float(_maha(x1, mu12, _chol(p.schur))[0]) if p.n1 else 0.0
    q2 = float(_maha(x2, mu2, _chol(p.sigma2))[0]) if p.n2 else 0.0
    return q1, q2


def tail_probability(d: StudentT | Gaussian, threshold: float,
                     tol: float = 1e-6) -> float:
    """P(|x - mu| > threshold) for a scalar density, by adaptive quadrature."""
    if d.dim != 1:
        raise ValueError("tail_probability needs a scalar density")
    if isinstance(d, Gaussian):
        mu = float(d.mean[0])
        logpdf = lambda v: gaussian_logpdf(d, np.array([v]))
    else:
        mu = float(d.mu[0])
        logpdf = lambda v: t_logpdf(d, np.array([v]))
    f = lambda v: math.exp(logpdf(v))
    upper, _ = integrate.quad(f, mu + threshold, np.inf, epsabs=tol * 1e-2,
                              epsrel=tol)
    lower, _ = integrate.quad(f, -np.inf, mu - threshold, epsabs=tol * 1e-2,
                              epsrel=tol)
    return upper + lower


# -- elliptically contoured densities ---------------------------------------

@dataclass(frozen=True)
class EllipticalDensity:
    """Density ``det(sigma)^-1/2 g((x-mu)^T sigma^-1 (x-mu))``.

    ``generator`` maps a squared radius to ``g(r2) >= 0``. An optional
    ``log_generator`` is used where available to stay in the log domain.
    For n <= 2 the generator normalization is verified at construction.
    """

    mu: np.ndarray
    sigma: np.ndarray
    generator: Callable[[float], float]
    log_generator: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        mu = _frozen(np.atleast_1d(self.mu))
        sigma = _frozen(np.atleast_2d(self.sigma))
        if sigma.shape != (mu.size, mu.size):
            raise ValueError("dimension mismatch between mu and sigma")
        _check_sym_psd(sigma, "sigma")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        if mu.size <= 2:
            mass = generator_mass(self.generator, mu.size)
            if abs(mass - 1.0) > 1e-4:
                raise ValueError(f"generator integrates to {mass}, not 1")

    @property
    def dim(self) -> int:
        return self.mu.size

    def log_g(self, r2):
        if self.log_generator is not None:
            return self.log_generator(r2)
        return np.log(self.generator(r2))


def _radial_constant(n: int) -> float:
    # surface area of the unit sphere in R^n
    return 2.0 * math.pi ** (0.5 * n) / math.gamma(0.5 * n)


def generator_mass(g: Callable[[float], float], n: int) -> float:
    """Integral of g(u^T u) over R^n, reduced to a radial quadrature."""
    f = lambda r: r ** (n - 1) * g(r * r)
    val, _ = integrate.quad(f, 0.0, np.inf, limit=200)
    return _radial_constant(n) * val


def gaussian_generator(n: int):
    """(g, log g) pair of the n-dimensional standard Gaussian."""
    c = -0.5 * n * math.log(2 * math.pi)
    return (lambda r2: np.exp(c - 0.5 * np.asarray(r2)),
            lambda r2: c - 0.5 * np.asarray(r2))


def t_generator(n: int, nu: float):
    """(g, log g) pair reproducing the t density with ``nu`` degrees of freedom."""
    c = (gammaln(0.5 * (nu + n)) - gammaln(0.5 * nu)
         - 0.5 * n * math.log(nu * math.pi))
    log_g = lambda r2: c - 0.5 * (nu + n) * np.log1p(np.asarray(r2) / nu)
    return (lambda r2: np.exp(log_g(r2))), log_g


def elliptical_from_t(d: StudentT) -> EllipticalDensity:
    g, log_g = t_generator(d.dim, d.nu)
    return EllipticalDensity(d.mu, d.sigma, g, log_g)


def elliptical_from_gaussian(d: Gaussian) -> EllipticalDensity:
    g, log_g = gaussian_generator(d.dim)
    return EllipticalDensity(d.mean, d.cov, g, log_g)


def elliptical_logpdf(e: EllipticalDensity, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    n = e.dim
    chol = _chol(e.sigma)
    batch = x.ndim == 2 or (n == 1 and x.ndim == 1 and x.size > 1)
    r2 = _maha(x.reshape(-1, n), e.mu, chol)
    out = -np.sum(np.log(np.diag(chol))) + e.log_g(r2)
    out = np.asarray(out, dtype=float)
    return out if batch else float(out[0])


def elliptical_covariance(e: EllipticalDensity, tol: float = 1e-6) -> np.ndarray:
    """Covariance ``E(r^2)/n * sigma`` from the radial density of r.

    The radial second moment is checked for convergence by the power-law
    decay of its integrand; anything decaying no faster than 1/r raises
    MomentError.
    """
    n = e.dim
    k = _radial_constant(n)

    def log_h(r):
        # log of r^2 * p(r)
        return math.log(k) + (n + 1) * math.log(r) + float(e.log_g(r * r))

    r1, r2 = 1e6, 1e7
    h1, h2 = log_h(r1), log_h(r2)
    if np.isfinite(h1) and np.isfinite(h2):
        slope = (h2 - h1) / math.log(r2 / r1)
        if slope > -1.0 - 1e-3:
            raise MomentError("second moment does not exist")
    f = lambda r: math.exp(log_h(r)) if r > 0 else 0.0
    er2, _ = integrate.quad(f, 0.0, np.inf, epsabs=tol * 1e-3, epsrel=tol,
                            limit=200)
    return er2 / n * np.array(e.sigma)
