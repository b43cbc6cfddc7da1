"""Kullback-Leibler calibration of t-density approximations.

Two problems are covered. The first approximates a product of two scalar
t densities by one bivariate t with diagonal scale, searched on a lattice.
The second rescales the matrix of an n-dimensional t density when its
degrees of freedom are reduced. Because the divergence depends on the
sample only through ``x^T sigma^-1 x``, the optimal factor depends on
(n, nu, nu') alone and can be tabulated once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import gammaln

from .distributions import StudentT, as_rng, t_logpdf, t_sample
from .exceptions import MomentError, TableLookupError

GAUSSIAN_DOF = 1e6
Q_FLOOR = 1e-300


# -- numeric divergence ------------------------------------------------------

def kld_numeric(p, q, cell: float = 1.0) -> float:
    """Riemann sum of ``p log(p/q)`` over a common grid.

    ``p`` and ``q`` are density values on the same grid points and ``cell``
    is the volume of one grid cell. Cells with ``p == 0`` contribute nothing
    and ``q`` is floored at 1e-300 inside the logarithm.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"grid mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    pm = p[mask]
    terms = pm * (np.log(pm) - np.log(np.maximum(q[mask], Q_FLOOR)))
    return float(np.sum(terms) * cell)


def _log_t1(x2, scale, nu):
    # scalar t log-density from squared argument
    return (gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu)
            - 0.5 * np.log(nu * np.pi * scale)
            - 0.5 * (nu + 1) * np.log1p(x2 / (scale * nu)))


@dataclass
class GridSearchResult:
    """Outcome of the lattice search over (nu', sigma1', sigma2').

    ``surface[i]`` holds the divergence over the (sigma1', sigma2') lattice
    for ``nu_values[i]``.
    """

    best_nu: float
    best_sigma1: float
    best_sigma2: float
    kld: float
    nu_values: np.ndarray
    sigma1_values: np.ndarray
    sigma2_values: np.ndarray
    surface: np.ndarray

    def best_for(self, nu) -> tuple[float, float, float]:
        """(sigma1', sigma2', kld) minimizing the surface at a fixed nu'."""
        i = int(np.flatnonzero(np.isclose(self.nu_values, nu))[0])
        j, k = np.unravel_index(np.argmin(self.surface[i]), self.surface[i].shape)
        return (float(self.sigma1_values[j]), float(self.sigma2_values[k]),
                float(self.surface[i, j, k]))

    def min_by_nu(self) -> dict:
        return {float(nu): float(self.surface[i].min())
                for i, nu in enumerate(self.nu_values)}


def _lattice(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(count), 10)


def product_density_grid(sigma1, nu1, sigma2, nu2, extent=15.0, points=2001):
    """Axis, cell area and normalized product density on a square grid."""
    x = np.linspace(-extent, extent, points)
    dx = x[1] - x[0]
    lp = _log_t1(x * x, sigma1, nu1)[:, None] + _log_t1(x * x, sigma2, nu2)[None, :]
    mass = np.exp(lp).sum() * dx * dx
    return x, dx * dx, np.exp(lp) / mass


def joint_product_grid_search(sigma1: float, nu1: float, sigma2: float,
                              nu2: float, nu_prime_set: Iterable[float],
                              sigma_step: float = 0.05,
                              sigma_range: tuple[float, float] = (0.5, 2.0),
                              extent: float = 15.0,
                              points: int = 2001) -> GridSearchResult:
    """Approximate St(sigma1, nu1) x St(sigma2, nu2) by one bivariate t.

    The product density ``p`` is evaluated on a ``points x points`` grid over
    ``[-extent, extent]^2`` and normalized there. For each candidate nu' and
    each (sigma1', sigma2') on the lattice the divergence KL(p || q) to the
    uncorrelated bivariate t ``q`` is computed as in :func:`kld_numeric`.

    Both densities are even in each coordinate, so the sum is folded onto
    one quadrant with multiplicity weights; the result is the same Riemann
    sum as over the full grid.
    """
    if points < 3 or points % 2 == 0:
        raise ValueError("points must be odd and at least 3")
    if sigma_step <= 0 or sigma_range[0] <= 0 or sigma_range[1] < sigma_range[0]:
        raise ValueError("degenerate sigma lattice")
    nus = np.array(sorted(float(v) for v in nu_prime_set))
    if nus.size == 0:
        raise ValueError("empty nu' set")
    s_vals = _lattice(sigma_range[0], sigma_range[1], sigma_step)

    x, cell, p = product_density_grid(sigma1, nu1, sigma2, nu2, extent, points)
    half = points // 2
    xq = x[half:]
    mult = np.full(xq.size, 2.0)
    mult[0] = 1.0
    w = p[half:, half:] * mult[:, None] * mult[None, :] * cell
    u1 = (xq * xq)[:, None]
    u2 = (xq * xq)[None, :]
    mask = w > 0
    neg_entropy = float(np.sum(w[mask] * np.log(p[half:, half:][mask])))
    total = float(w.sum())

    surface = np.empty((nus.size, s_vals.size, s_vals.size))
    for i, nu in enumerate(nus):
        c0 = gammaln(0.5 * (nu + 2)) - gammaln(0.5 * nu) - np.log(nu * np.pi)
        for j, s1 in enumerate(s_vals):
            a = u1 / (s1 * nu)
            for k, s2 in enumerate(s_vals):
                cross = np.sum(w * np.log1p(a + u2 / (s2 * nu)))
                logq_mean = (c0 - 0.5 * np.log(s1 * s2)) * total \
                    - 0.5 * (nu + 2) * cross
                surface[i, j, k] = neg_entropy - logq_mean
    i, j, k = np.unravel_index(np.argmin(surface), surface.shape)
    return GridSearchResult(float(nus[i]), float(s_vals[j]), float(s_vals[k]),
                            float(surface[i, j, k]), nus, s_vals, s_vals.copy(),
                            surface)


# -- marginal scale factor ------------------------------------------------------

def _standard_radii(n: int, nu: float, N: int, seed) -> np.ndarray:
    """Squared radii of N draws from St(0, I_n, nu)."""
    rng = as_rng(seed)
    lam = rng.gamma(0.5 * nu, 2.0 / nu, size=N)
    r2 = np.zeros(N)
    # chunked so that n = 16 with N = 1e6 stays small in memory
    chunk = max(1, 4_000_000 // max(n, 1))
    for s in range(0, N, chunk):
        z = rng.standard_normal((min(chunk, N - s), n))
        r2[s:s + z.shape[0]] = np.einsum("ij,ij->i", z, z)
    return r2 / lam


def _log_ratio_from_radii(r2, n, nu, nu_prime, c):
    # log St(x; 0, I, nu) - log St(x; 0, cI, nu') with r2 = x^T x
    lp = (gammaln(0.5 * (nu + n)) - gammaln(0.5 * nu)
          - 0.5 * n * np.log(nu * np.pi) - 0.5 * (nu + n) * np.log1p(r2 / nu))
    lq = (gammaln(0.5 * (nu_prime + n)) - gammaln(0.5 * nu_prime)
          - 0.5 * n * np.log(nu_prime * np.pi) - 0.5 * n * np.log(c)
          - 0.5 * (nu_prime + n) * np.log1p(r2 / (c * nu_prime)))
    return lp - lq


def kld_scale_objective(n: int, nu: float, nu_prime: float, c: float,
                        N: int = 1_000_000, seed=0, sigma=None,
                        full_output: bool = False):
    """Monte Carlo KL(St(0, S, nu) || St(0, cS, nu')) with S = I by default.

    Samples come from the source density, so for a fixed seed the value is
    a smooth deterministic function of ``c``. When ``sigma`` is given the
    full matrix densities are evaluated instead of the radial shortcut.
    With ``full_output`` the standard error is returned as well.
    """
    if c <= 0 or nu <= 0 or nu_prime <= 0:
        raise ValueError("c, nu and nu' must be positive")
    if sigma is None:
        vals = _log_ratio_from_radii(_standard_radii(n, nu, N, seed), n, nu,
                                     nu_prime, c)
    else:
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        p = StudentT(np.zeros(n), sigma, nu)
        q = StudentT(np.zeros(n), c * sigma, nu_prime)
        xs = t_sample(p, seed, N)
        vals = t_logpdf(p, xs) - t_logpdf(q, xs)
    est = float(np.mean(vals))
    if full_output:
        return est, float(np.std(vals, ddof=1) / math.sqrt(N))
    return est


def golden_section(f, a: float, b: float, tol: float = 1e-3,
                   max_iter: int = 200) -> float:
    """Minimize a unimodal ``f`` on [a, b] to an interval width below ``tol``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_scale_factor(n: int, nu: float, nu_prime: float,
                         N: int = 1_000_000, seed=0,
                         bracket: tuple[float, float] = (0.05, 3.0),
                         tol: float = 1e-3) -> float:
    """KLD-optimal factor c for replacing St(0, S, nu) by St(0, cS, nu').

    One set of source draws is reused for every trial ``c`` (common random
    numbers). Raises RuntimeError when the minimizer hits the bracket.
    """
    if nu_prime > nu:
        raise ValueError("only reductions of the degrees of freedom are supported")
    if nu_prime == nu:
        return 1.0
    r2 = _standard_radii(n, nu, N, seed)
    obj = lambda c: float(np.mean(_log_ratio_from_radii(r2, n, nu, nu_prime, c)))
    c = golden_section(obj, bracket[0], bracket[1], tol)
    if c - bracket[0] < 2 * tol or bracket[1] - c < 2 * tol:
        raise RuntimeError(f"search bracket failure: optimum {c:.4f} at the edge")
    return c


def moment_matching_factor(nu: float, nu_prime: float) -> float:
    """Factor preserving the covariance when nu is replaced by nu'.

    ``nu`` may be ``math.inf`` for a Gaussian source.
    """
    if nu <= 2 or nu_prime <= 2:
        raise MomentError("moments undefined for dof <= 2")
    if nu == nu_prime:
        return 1.0
    if math.isinf(nu):
        return (nu_prime - 2.0) / nu_prime
    if math.isinf(nu_prime):
        return nu / (nu - 2.0)
    return (nu_prime - 2.0) * nu / (nu_prime * (nu - 2.0))


# -- table -------------------------------------------------------------------

def _inv(nu: float) -> float:
    return 0.0 if math.isinf(nu) else 1.0 / nu


@dataclass
class ScaleFactorTable:
    """KLD-optimal factors c keyed by (n, nu, nu').

    Lookups between tabulated dofs interpolate bilinearly in inverse
    degrees of freedom, so a Gaussian source sits at 0.
    """

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (n, nu, nup), c in self.entries.items():
            if not c > 0:
                raise ValueError(f"factor for {(n, nu, nup)} must be positive")
            clean[(int(n), float(nu), float(nup))] = float(c)
        self.entries = clean

    def __len__(self):
        return len(self.entries)

    def _value(self, n, nu, nup):
        if math.isclose(nu, nup, rel_tol=1e-12):
            return 1.0
        for (kn, knu, knup), c in self.entries.items():
            if kn == n and math.isclose(knu, nu, rel_tol=1e-9) \
                    and math.isclose(knup, nup, rel_tol=1e-9):
                return c
        return None

    def lookup(self, n: int, nu: float, nu_prime: float) -> float:
        n, nu, nu_prime = int(n), float(nu), float(nu_prime)
        exact = self._value(n, nu, nu_prime)
        if exact is not None:
            return exact
        nus = sorted({k[1] for k in self.entries if k[0] == n}, key=_inv)
        nups = sorted({k[2] for k in self.entries if k[0] == n}
                      | {k[1] for k in self.entries if k[0] == n}, key=_inv)

        def bracket(vals, v):
            t = _inv(v)
            inv = [_inv(u) for u in vals]
            for u, iu in zip(vals, inv):
                if math.isclose(iu, t, rel_tol=1e-9, abs_tol=1e-15):
                    return u, u, 0.0
            for lo, hi, ilo, ihi in zip(vals, vals[1:], inv, inv[1:]):
                if ilo <= t <= ihi:
                    return lo, hi, (t - ilo) / (ihi - ilo) if ihi > ilo else 0.0
            return None

        bn, bp = bracket(nus, nu), bracket(nups, nu_prime)
        if bn is None or bp is None:
            raise TableLookupError(f"no table entry for (n={n}, nu={nu}, nu'={nu_prime})")
        corners = [[self._value(n, a, b) for b in bp[:2]] for a in bn[:2]]
        if any(v is None for row in corners for v in row):
            raise TableLookupError(f"no table entry for (n={n}, nu={nu}, nu'={nu_prime})")
        ta, tb = bn[2], bp[2]
        return ((1 - ta) * ((1 - tb) * corners[0][0] + tb * corners[0][1])
                + ta * ((1 - tb) * corners[1][0] + tb * corners[1][1]))

    def to_csv(self, path, header_comment: str | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "nu", "nu_prime", "c"])
            for (n, nu, nup), c in sorted(self.entries.items()):
                w.writerow([n, repr(nu), repr(nup), repr(c)])

    @classmethod
    def from_csv(cls, path) -> "ScaleFactorTable":
        with Path(path).open(newline="") as fh:
            rows = csv.DictReader(line for line in fh if not line.startswith("#"))
            entries = {(int(r["n"]), float(r["nu"]), float(r["nu_prime"])):
                       float(r["c"]) for r in rows}
        return cls(entries)


def cell_seed(seed: int, n: int, nu: float, nu_prime: float) -> np.random.SeedSequence:
    """Independent, reproducible seed for one table cell."""
    key = (int(n), int(round(nu * 1000)), int(round(nu_prime * 1000)))
    return np.random.SeedSequence(int(seed), spawn_key=key)


def build_scale_table(dims: Iterable[int], dofs: Iterable[float],
                      target_dofs: Iterable[float], N: int = 1_000_000,
                      seed: int = 0) -> ScaleFactorTable:
    """Tabulate :func:`optimal_scale_factor` over the Cartesian product.

    Cells with nu' > nu are skipped since only reductions are meaningful.
    """
    entries = {}
    for n in sorted(set(int(d) for d in dims)):
        for nu in sorted(set(float(v) for v in dofs)):
            for nup in sorted(set(float(v) for v in target_dofs)):
                if nup > nu:
                    continue
                if nup == nu:
                    entries[(n, nu, nup)] = 1.0
                    continue
                rng = np.random.default_rng(cell_seed(seed, n, nu, nup))
                entries[(n, nu, nup)] = optimal_scale_factor(n, nu, nup, N, rng)
    return ScaleFactorTable(entries)
