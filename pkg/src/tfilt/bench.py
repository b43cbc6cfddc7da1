"""Experiment drivers: the scalar t random walk and the drone tracking study."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .calibration import GAUSSIAN_DOF, ScaleFactorTable, cell_seed, optimal_scale_factor
from .distributions import Gaussian, StudentT, as_rng
from .exceptions import InfeasibleScenarioError
from .kalman import kf_run, rts_smooth
from .models import CovarianceSchedule, LinearModel
from .student import ApproximationStrategy, Variant, tf_run, ts_smooth


# -- scalar random walk --------------------------------------------------------

@dataclass(frozen=True)
class ScalarWalkConfig:
    """x[k+1] = x[k] + v[k], y[k] = x[k] + e[k] with t distributed x[0], v, e."""

    steps: int = 15
    prior_scale: float = 1.0
    prior_nu: float = 3.0
    q_scale: float = 1.0
    q_nu: float = 3.0
    r_scale: float = 1.0
    r_nu: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")

    def model(self) -> LinearModel:
        return LinearModel([[1.0]], [[1.0]], [[self.q_scale]], [[self.r_scale]],
                           StudentT([0.0], [[self.prior_scale]], self.prior_nu),
                           gamma=self.q_nu, delta=self.r_nu)


def scalar_t_draws(rng: np.random.Generator, scale: float, nu: float, size: int):
    z = rng.standard_normal(size)
    if math.isinf(nu):
        return math.sqrt(scale) * z
    return math.sqrt(scale) * z / np.sqrt(rng.gamma(0.5 * nu, 2.0 / nu, size))


def simulate_scalar_walk(c: ScalarWalkConfig) -> tuple[np.ndarray, np.ndarray]:
    """States x[0..steps] and measurements y[1..steps]."""
    rng = as_rng(c.seed)
    x0 = scalar_t_draws(rng, c.prior_scale, c.prior_nu, 1)[0]
    v = scalar_t_draws(rng, c.q_scale, c.q_nu, c.steps)
    e = scalar_t_draws(rng, c.r_scale, c.r_nu, c.steps)
    x = x0 + np.concatenate(([0.0], np.cumsum(v)))
    return x, x[1:] + e


def inject_outlier(measurements, k: int, offset: float) -> np.ndarray:
    """Copy of y[1..L] with ``offset`` added to the measurement at step k."""
    y = np.array(measurements, dtype=float)
    y[k - 1] += offset
    return y


# -- drone scenario ------------------------------------------------------------

@dataclass(frozen=True)
class DroneScenario:
    """Constant velocity target in a fenced yard with maneuvers and outliers.

    ``Q`` entries are acceleration covariances and apply to the transition
    from k to k+1; ``R`` entries apply to the measurement at k.
    """

    T: float = 0.2
    steps: int = 151
    x0: tuple = (150.0, 300.0, 0.0, -15.0)
    yard: float = 300.0
    speed_cap: float = 30.0
    maneuver_gain: float = 20.0 ** 2
    maneuver_steps: tuple = (25, 75, 125)
    r_nom: float = 5.0 ** 2
    r_out: float = 25.0 ** 2
    outlier_steps: tuple = (50, 100)
    runs: int = 500
    max_rejections: int = 10_000
    P0: tuple = (1.0, 1.0, 1.0, 1.0)

    def without_events(self) -> "DroneScenario":
        return replace(self, maneuver_steps=(), outlier_steps=())

    @property
    def F(self) -> np.ndarray:
        I2 = np.eye(2)
        return np.block([[I2, self.T * I2], [np.zeros((2, 2)), I2]])

    @property
    def G(self) -> np.ndarray:
        return np.vstack([0.5 * self.T ** 2 * np.eye(2), self.T * np.eye(2)])

    @property
    def H(self) -> np.ndarray:
        return np.hstack([np.eye(2), np.zeros((2, 2))])

    @property
    def Q_nom(self) -> np.ndarray:
        return np.eye(2) / self.T ** 2

    @property
    def R_nom(self) -> np.ndarray:
        return self.r_nom * np.eye(2)

    def Q_at(self, k: int) -> np.ndarray:
        g = self.maneuver_gain if k in self.maneuver_steps else 1.0
        return g * self.Q_nom

    def R_at(self, k: int) -> np.ndarray:
        return self.r_out * np.eye(2) if k in self.outlier_steps else self.R_nom

    def state_noise(self, Q: np.ndarray) -> np.ndarray:
        M = self.G @ Q @ self.G.T
        return 0.5 * (M + M.T)

    def schedule(self) -> CovarianceSchedule:
        return CovarianceSchedule(
            Q={k: self.state_noise(self.Q_at(k)) for k in self.maneuver_steps},
            R={k: self.R_at(k) for k in self.outlier_steps})


@dataclass
class DroneTrajectory:
    states: np.ndarray        # (steps, 4), k = 0..steps-1
    measurements: np.ndarray  # (steps, 2); row 0 is simulated but unused by filters
    maneuver: np.ndarray
    outlier: np.ndarray
    rejections: int = 0


def _feasible(s: DroneScenario, X: np.ndarray) -> bool:
    p, v = X[:, :2], X[:, 2:]
    inside = np.all((p >= 0.0) & (p <= s.yard))
    return bool(inside and np.all(np.linalg.norm(v, axis=1) <= s.speed_cap))


def simulate_drone(s: DroneScenario, seed=0) -> DroneTrajectory:
    """Rejection-sample whole trajectories until every step is feasible."""
    rng = as_rng(seed)
    F, G = s.F, s.G
    n = s.steps
    LQ = [np.linalg.cholesky(s.Q_at(k)) for k in range(n - 1)]
    LR = [np.linalg.cholesky(s.R_at(k)) for k in range(n)]
    for attempt in range(s.max_rejections):
        X = np.empty((n, 4))
        X[0] = s.x0
        a = rng.standard_normal((n - 1, 2))
        for k in range(n - 1):
            X[k + 1] = F @ X[k] + G @ (LQ[k] @ a[k])
        e = rng.standard_normal((n, 2))
        Y = X[:, :2] + np.einsum("kij,kj->ki", np.array(LR), e)
        if _feasible(s, X):
            ks = np.arange(n)
            return DroneTrajectory(X, Y, np.isin(ks, s.maneuver_steps),
                                   np.isin(ks, s.outlier_steps), attempt)
    raise InfeasibleScenarioError("scenario infeasible for seed stream")


# -- error metrics ---------------------------------------------------------------

RMSE_FIRST = 5
RMSE_LAST = 150
RMSE_NORMALIZER = 145.0


def position_rmse(truth, estimates) -> float:
    """sqrt(sum_{k=5}^{150} |p_k - phat_k|^2 / 145).

    The normalizer is 145 even though 146 terms are summed. Inputs are
    arrays indexed by k whose first two columns are the position.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if truth.shape[0] != est.shape[0]:
        raise ValueError("misaligned lengths")
    if truth.shape[0] <= RMSE_LAST:
        raise ValueError(f"sequences must cover k = {RMSE_FIRST}..{RMSE_LAST}")
    d = truth[RMSE_FIRST:RMSE_LAST + 1, :2] - est[RMSE_FIRST:RMSE_LAST + 1, :2]
    return math.sqrt(float(np.sum(d * d)) / RMSE_NORMALIZER)


def position_errors(truth, estimates) -> np.ndarray:
    truth, est = np.asarray(truth), np.asarray(estimates)
    return np.linalg.norm(truth[:, :2] - est[:, :2], axis=1)


def silverman_bandwidth(values) -> float:
    v = np.asarray(values, dtype=float)
    return 1.06 * float(np.std(v, ddof=1)) * v.size ** (-0.2)


def kde(values, bandwidth: Optional[float] = None, points: int = 512
        ) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian kernel density estimate on a grid reaching 5 bandwidths
    beyond the data."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("need at least two values")
    if not np.std(v) > 0:
        raise ValueError("zero variance input")
    h = silverman_bandwidth(v) if bandwidth is None else float(bandwidth)
    grid = np.linspace(v.min() - 5 * h, v.max() + 5 * h, points)
    dens = np.zeros(points)
    for s in range(0, v.size, 2048):
        u = (grid[:, None] - v[None, s:s + 2048]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= v.size * h * math.sqrt(2 * math.pi)
    return grid, dens


# -- benchmark -------------------------------------------------------------------

FILTERS = ("kf-nominal", "kf-clairvoyant", "t-filter")
SMOOTHERS = ("rts-nominal", "rts-clairvoyant", "t-smoother")
T_DOF = 3.0


@dataclass
class McErrorSummary:
    label: str
    rmse: list = field(default_factory=list)
    kde_grid: Optional[np.ndarray] = None
    kde_density: Optional[np.ndarray] = None

    @property
    def median(self) -> float:
        return float(np.median(self.rmse))


@dataclass
class BenchmarkResult:
    summaries: dict
    traces: dict
    conversion: dict
    notices: list = field(default_factory=list)

    def sign_test(self, better: str = "t-filter", worse: str = "kf-nominal") -> float:
        """One-sided sign test p-value for ``better`` having lower RMSE."""
        a = np.asarray(self.summaries[better].rmse)
        b = np.asarray(self.summaries[worse].rmse)
        wins, losses = int(np.sum(a < b)), int(np.sum(a > b))
        if wins + losses == 0:
            return 1.0
        return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


def conversion_table(nu: float = T_DOF, N: int = 1_000_000, seed: int = 0
                     ) -> ScaleFactorTable:
    """KLD factors needed by the drone t filter.

    Gaussian to t conversions of the 2-D noises and the 4-D prior, plus the
    4-D reduction from nu + 2 back to nu after every measurement update.
    """
    cells = [(2, GAUSSIAN_DOF, nu), (4, GAUSSIAN_DOF, nu), (4, nu + 2, nu)]
    entries = {}
    for n, src, dst in cells:
        rng = np.random.default_rng(cell_seed(seed, n, src, dst))
        entries[(n, src, dst)] = optimal_scale_factor(n, src, dst, N, rng)
    return ScaleFactorTable(entries)


def drone_models(s: DroneScenario, table: ScaleFactorTable, nu: float = T_DOF):
    """(nominal KF model, clairvoyant KF model, t filter model)."""
    mean = np.asarray(s.x0, dtype=float)
    P0 = np.diag(s.P0)
    Q = s.state_noise(s.Q_nom)
    nominal = LinearModel(s.F, s.H, Q, s.R_nom, Gaussian(mean, P0))
    clair = replace(nominal, schedule=s.schedule())
    c2 = table.lookup(2, GAUSSIAN_DOF, nu)
    c4 = table.lookup(4, GAUSSIAN_DOF, nu)
    tmodel = LinearModel(s.F, s.H, c2 * Q, c2 * s.R_nom,
                         StudentT(mean, c4 * P0, nu), gamma=nu, delta=nu)
    return nominal, clair, tmodel


def estimate_drone(traj: DroneTrajectory, models, strategy) -> dict:
    """Position-bearing estimate arrays (k = 0..L) for all six estimators."""
    nominal, clair, tmodel = models
    ys = traj.measurements[1:]
    out = {}
    for lab_f, lab_s, m in (("kf-nominal", "rts-nominal", nominal),
                            ("kf-clairvoyant", "rts-clairvoyant", clair)):
        steps = kf_run(m, ys)
        out[lab_f] = np.array([st.filtered.xhat for st in steps])
        out[lab_s] = np.array([b.xhat for b in rts_smooth(steps, m)])
    rec = tf_run(tmodel, ys, strategy)
    out["t-filter"] = np.array([r.filtered.xhat for r in rec])
    out["t-smoother"] = np.array([b.xhat for b in ts_smooth(rec, tmodel)])
    return out


def run_benchmark(s: DroneScenario, runs: Optional[int] = None, seed: int = 0,
                  filters: Sequence[str] = FILTERS + SMOOTHERS,
                  trace_runs: Sequence[int] = (0,),
                  table: Optional[ScaleFactorTable] = None) -> BenchmarkResult:
    """Monte Carlo comparison on independent trajectories.

    Run i uses child i of ``SeedSequence(seed)``. Per-step position errors
    are kept for the runs listed in ``trace_runs``.
    """
    runs = s.runs if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be at least 1")
    unknown = set(filters) - set(FILTERS + SMOOTHERS)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    table = conversion_table(seed=seed) if table is None else table
    strategy = ApproximationStrategy(Variant.KLD_SCALED, table)
    models = drone_models(s, table)
    summaries = {lab: McErrorSummary(lab) for lab in filters}
    traces = {}
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(runs)):
        traj = simulate_drone(s, np.random.default_rng(child))
        est = estimate_drone(traj, models, strategy)
        for lab in filters:
            summaries[lab].rmse.append(position_rmse(traj.states, est[lab]))
        if i in trace_runs:
            traces[i] = {lab: position_errors(traj.states, est[lab]) for lab in filters}
    notices = []
    for summ in summaries.values():
        if runs >= 2 and np.std(summ.rmse) > 0:
            summ.kde_grid, summ.kde_density = kde(summ.rmse)
    if runs < 2:
        notices.append("kde skipped: fewer than two runs")
    conv = {"c_noise": table.lookup(2, GAUSSIAN_DOF, T_DOF),
            "c_prior": table.lookup(4, GAUSSIAN_DOF, T_DOF)}
    return BenchmarkResult(summaries, traces, conv, notices)
