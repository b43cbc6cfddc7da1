from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy import stats

from tfilt.bench import ScalarWalkConfig, inject_outlier, simulate_scalar_walk
from tfilt.distributions import Gaussian
from tfilt.exceptions import GridError
from tfilt.grid_oracle import (GridDensity, additive_likelihood, additive_transition,
                               count_modes, grid_moments, grid_predict, grid_run,
                               grid_run_auto, grid_smooth, grid_update, make_grid,
                               scalar_t_logpdf)
from tfilt.kalman import kf_run, rts_smooth
from tfilt.models import LinearModel
from tfilt.student import tf_run, ts_smooth

X = make_grid(-40.0, 40.0, 2001)


def gaussian_density(x, mean, var):
    return GridDensity.from_logpdf(x, lambda z: -0.5 * (z - mean) ** 2 / var)


def t_walk_run(ys):
    return grid_run(X, lambda z: scalar_t_logpdf(z, 1.0, 3.0),
                    additive_transition(1.0, 1.0, 3.0), additive_likelihood(1.0, 1.0, 3.0), ys)


def outlier_data(seed=0, offset=15.0):
    _, ys = simulate_scalar_walk(ScalarWalkConfig(seed=seed))
    return inject_outlier(ys, 9, offset)


class TestDensity:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            GridDensity([0.0, 1.0], [1.0, -1.0])

    def test_normalized(self):
        d = gaussian_density(X, 1.0, 2.0)
        assert d.mass() == pytest.approx(1.0, abs=1e-10)

    def test_symmetric_mean(self):
        d = GridDensity.from_logpdf(X, lambda z: scalar_t_logpdf(z, 1.0, 3.0))
        assert abs(grid_moments(d)[0]) < d.dx

    def test_gaussian_variance(self):
        assert grid_moments(gaussian_density(X, 0.5, 2.5))[1] == pytest.approx(2.5, abs=1e-4)

    def test_t3_variance_on_wide_grid(self):
        # the t3 variance converges slowly in the truncation radius: the
        # missing tail mass beyond |x| = R contributes about 6 sqrt(3) / (pi R)
        x = make_grid(-2000.0, 2000.0, 400_001)
        d = GridDensity.from_logpdf(x, lambda z: scalar_t_logpdf(z, 1.0, 3.0))
        assert grid_moments(d)[1] == pytest.approx(3.0, rel=0.02)


class TestPredict:
    def test_dirac_input(self):
        pdf = np.zeros_like(X)
        pdf[1200] = 1.0 / (X[1] - X[0])
        out = grid_predict(GridDensity(X, pdf), additive_transition(0.5, 1.0))
        mean, var = grid_moments(out)
        assert mean == pytest.approx(0.5 * X[1200], abs=1e-9)
        assert var == pytest.approx(1.0, abs=1e-4)

    def test_gaussian_convolution(self):
        out = grid_predict(gaussian_density(X, 1.0, 2.0), additive_transition(1.0, 3.0))
        mean, var = grid_moments(out)
        assert mean == pytest.approx(1.0, abs=1e-6)
        assert var == pytest.approx(5.0, abs=1e-4)
        np.testing.assert_allclose(out.pdf, stats.norm.pdf(X, 1.0, math.sqrt(5.0)), atol=1e-6)

    def test_t_walk_normalized(self):
        d = GridDensity.from_logpdf(X, lambda z: scalar_t_logpdf(z, 1.0, 3.0))
        assert grid_predict(d, additive_transition(1.0, 1.0, 3.0)).mass() == pytest.approx(1.0, abs=1e-10)

    def test_grid_too_small(self):
        x = make_grid(-3.0, 3.0, 301)
        with pytest.raises(GridError, match="grid too small"):
            grid_predict(gaussian_density(x, 0.0, 1.0), additive_transition(1.0, 25.0))


class TestUpdate:
    def test_flat_likelihood(self):
        d = gaussian_density(X, 0.0, 1.0)
        out, ev = grid_update(d, lambda y, x: 0.25, 3.0)
        np.testing.assert_allclose(out.pdf, d.pdf, rtol=1e-12, atol=1e-300)
        assert ev == pytest.approx(0.25)

    def test_zero_evidence(self):
        with pytest.raises(GridError, match="zero evidence"):
            grid_update(gaussian_density(X, 0.0, 1.0), lambda y, x: np.zeros_like(x), 0.0)

    def test_gaussian_update_matches_closed_form(self):
        out, ev = grid_update(gaussian_density(X, 0.0, 2.0), additive_likelihood(1.0, 1.0), 1.0)
        mean, var = grid_moments(out)
        assert mean == pytest.approx(2 / 3, abs=1e-6)
        assert var == pytest.approx(2 / 3, abs=1e-6)
        assert ev == pytest.approx(stats.norm.pdf(1.0, 0.0, math.sqrt(3.0)), rel=1e-6)

    def test_outlier_step_bimodal(self):
        run = t_walk_run(outlier_data())
        assert count_modes(run.filtered[9]) == 2


class TestRunAgainstKalman:
    def setup_method(self):
        self.model = LinearModel([[1.0]], [[1.0]], [[1.0]], [[1.0]], Gaussian([0.0], [[1.0]]))
        rng = np.random.default_rng(11)
        self.ys = np.cumsum(rng.standard_normal(15)) + rng.standard_normal(15)
        self.run = grid_run(X, lambda z: -0.5 * z * z, additive_transition(1.0, 1.0),
                            additive_likelihood(1.0, 1.0), self.ys)
        self.steps = kf_run(self.model, self.ys[:, None])

    def test_filter(self):
        for d, s in zip(self.run.filtered, self.steps):
            mean, var = grid_moments(d)
            assert mean == pytest.approx(s.filtered.xhat[0], abs=1e-3)
            assert var == pytest.approx(s.filtered.P[0, 0], abs=1e-3)

    def test_smoother(self):
        for d, b in zip(self.run.smoothed, rts_smooth(self.steps, self.model)):
            mean, var = grid_moments(d)
            assert mean == pytest.approx(b.xhat[0], abs=1e-3)
            assert var == pytest.approx(b.P[0, 0], abs=1e-3)

    def test_last_smoothed_is_filtered(self):
        np.testing.assert_array_equal(self.run.smoothed[-1].pdf, self.run.filtered[-1].pdf)

    def test_normalization_everywhere(self):
        for seq in (self.run.filtered, self.run.predicted[1:], self.run.smoothed):
            for d in seq:
                assert d.mass() == pytest.approx(1.0, abs=1e-10)

    def test_smoothed_variance_not_larger(self):
        for f, s in zip(self.run.filtered, self.run.smoothed):
            assert grid_moments(s)[1] <= grid_moments(f)[1] + 1e-9


class TestSmoother:
    def test_outlier_step_single_mode(self):
        run = t_walk_run(outlier_data())
        assert count_modes(run.smoothed[9]) == 1

    def test_bimodal_then_unimodal_across_seeds(self):
        hits = 0
        for seed in range(8):
            run = t_walk_run(outlier_data(seed))
            hits += count_modes(run.filtered[9]) == 2 and count_modes(run.smoothed[9]) == 1
        assert hits >= 6

    def test_ill_conditioned_warning(self):
        x = make_grid(-10.0, 10.0, 201)
        f = [gaussian_density(x, 0.0, 1.0)] * 2
        # a prediction that vanishes where the smoothed density has mass
        p = [None, GridDensity(x, np.where(x > 0, 1.0, 0.0)).normalized()]
        with pytest.warns(RuntimeWarning, match="smoother ill-conditioned"):
            grid_smooth(f, p, additive_transition(1.0, 1.0))

    def test_no_warning_on_regular_run(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            t_walk_run(outlier_data())

    def test_refinement_convergence(self):
        ys = outlier_data()
        means = []
        for count in (251, 501, 1001, 2001):
            x = make_grid(-40.0, 40.0, count)
            run = grid_run(x, lambda z: scalar_t_logpdf(z, 1.0, 3.0),
                           additive_transition(1.0, 1.0, 3.0),
                           additive_likelihood(1.0, 1.0, 3.0), ys)
            means.append(np.array([grid_moments(d)[0] for d in run.smoothed]))
        changes = [np.max(np.abs(b - a)) for a, b in zip(means, means[1:])]
        for a, b in zip(changes, changes[1:]):
            assert b < 0.5 * a or b < 1e-10


class TestAutoWidening:
    def test_widens_until_boundary_is_clear(self):
        run = grid_run_auto(-6.0, 6.0, 301, lambda z: -0.5 * z * z / 4.0,
                            additive_transition(1.0, 0.01), additive_likelihood(1.0, 1.0),
                            [3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0])
        assert run.x[-1] > 6.0
        assert max(d.boundary_mass() for d in run.filtered) <= 1e-6


class TestAgainstTFilter:
    def test_t_filter_within_central_interval(self):
        ys = outlier_data()
        run = t_walk_run(ys)
        m = ScalarWalkConfig().model()
        rec = tf_run(m, ys[:, None])
        for k in range(1, 16):
            if k == 9:
                continue
            d = run.filtered[k]
            cdf = np.cumsum(d.pdf) * d.dx
            lo, hi = X[np.searchsorted(cdf, 0.005)], X[np.searchsorted(cdf, 0.995)]
            assert lo <= rec[k].filtered.xhat[0] <= hi

    def test_smoother_moves_towards_prediction_at_outlier(self):
        ys = outlier_data()
        m = ScalarWalkConfig().model()
        rec = tf_run(m, ys[:, None])
        sm = ts_smooth(rec, m)
        pred = rec[9].predicted.xhat[0]
        assert abs(sm[9].xhat[0] - pred) < abs(rec[9].filtered.xhat[0] - pred)
        run = t_walk_run(ys)
        assert abs(grid_moments(run.smoothed[9])[0] - pred) < abs(grid_moments(run.filtered[9])[0] - pred)
