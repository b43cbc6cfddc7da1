from __future__ import annotations

import numpy as np
import pytest

from tfilt.distributions import StudentT, t_sample
from tfilt.models import LinearModel
from tfilt.montecarlo import (NonlinearModel, SampleSet, em_fit_t, mc_measurement_update,
                              mc_run, mc_time_update)
from tfilt.student import TBelief, tf_measurement_update, tf_time_update


def linear_pair(N=100_000, q=1.0, r=1.0, nu=3.0):
    lm = LinearModel([[1.0]], [[1.0]], [[q]], [[r]], StudentT([0.0], [[1.0]], nu),
                     gamma=nu, delta=nu)
    nm = NonlinearModel(lambda x, v: x + v, lambda x, e: x + e, [[q]], [[r]], nu, nu, N=N)
    return lm, nm


class TestSampleSet:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            SampleSet(np.array([[1.0], [np.nan]]))

    def test_vector_promoted(self):
        assert SampleSet(np.arange(5.0)).dim == 1

    def test_model_needs_samples(self):
        with pytest.raises(ValueError):
            NonlinearModel(lambda x, v: x, lambda x, e: x, [[1]], [[1]], N=50)


class TestEM:
    def test_recovers_t_parameters(self):
        X = t_sample(StudentT([0, 0], np.eye(2), 3), 10, 100_000)
        res = em_fit_t(X, 3.0, full_output=True)
        np.testing.assert_allclose(res.mu, [0, 0], atol=0.05)
        np.testing.assert_allclose(res.sigma, np.eye(2), atol=0.05)
        assert res.converged
        assert np.all(np.diff(res.loglik) >= -1e-9 * np.abs(res.loglik[1:]))

    def test_correlated_scale(self):
        S = np.array([[2.0, 0.6], [0.6, 0.5]])
        X = t_sample(StudentT([1.0, -2.0], S, 4), 11, 100_000)
        mu, sigma = em_fit_t(X, 4.0)
        np.testing.assert_allclose(mu, [1.0, -2.0], atol=0.05)
        np.testing.assert_allclose(sigma, S, rtol=0.05, atol=0.02)

    def test_gaussian_limit(self):
        X = np.random.default_rng(0).standard_normal((20_000, 3)) @ np.diag([1, 2, 3])
        mu, sigma = em_fit_t(X, 1e6)
        np.testing.assert_allclose(mu, X.mean(axis=0), atol=0.01)
        np.testing.assert_allclose(sigma, np.cov(X, rowvar=False, bias=True), rtol=0.01)

    def test_identical_samples(self):
        X = np.tile([1.5, -0.5], (200, 1))
        res = em_fit_t(X, 3.0, full_output=True)
        np.testing.assert_allclose(res.mu, [1.5, -0.5])
        assert res.regularized
        assert np.max(np.abs(res.sigma)) < 1e-6

    def test_needs_more_samples_than_dims(self):
        with pytest.raises(ValueError):
            em_fit_t(np.ones((2, 3)), 3.0)


class TestUpdates:
    def test_time_update_matches_analytic(self):
        lm, nm = linear_pair()
        b = TBelief(np.array([0.5]), np.array([[1.3]]), 3.0)
        mc = mc_time_update(b, nm, seed=1)
        ref = tf_time_update(b, lm)
        np.testing.assert_allclose(mc.P, ref.P, rtol=0.03)
        np.testing.assert_allclose(mc.xhat, ref.xhat, atol=0.05)
        assert mc.eta == ref.eta

    def test_measurement_update_matches_analytic(self):
        lm, nm = linear_pair()
        b = TBelief(np.array([0.5]), np.array([[2.0]]), 3.0)
        mc = mc_measurement_update(b, [2.2], nm, seed=2)
        ref, _ = tf_measurement_update(b, [2.2], lm)
        np.testing.assert_allclose(mc.P, ref.P, rtol=0.03)
        np.testing.assert_allclose(mc.xhat, ref.xhat, atol=0.05)
        assert mc.eta == ref.eta

    def test_identity_without_noise_refits_prior(self):
        nm = NonlinearModel(lambda x, v: x + v, lambda x, e: x, [[0.0]], [[1.0]], 3.0, 3.0,
                            N=50_000)
        b = TBelief(np.array([1.0]), np.array([[2.0]]), 3.0)
        out = mc_time_update(b, nm, seed=3)
        np.testing.assert_allclose(out.P, b.P, rtol=0.03)
        np.testing.assert_allclose(out.xhat, b.xhat, atol=0.05)

    def test_zero_residual_factor(self):
        _, nm = linear_pair(N=20_000)
        b = TBelief(np.zeros(1), np.eye(1), 3.0)
        _, info = mc_measurement_update(b, [0.0], nm, seed=4, full_output=True)
        yhat = info["mu"][1:]
        post, info = mc_measurement_update(b, yhat, nm, seed=4, full_output=True)
        assert info["d_factor"] == pytest.approx(3 / 4)

    def test_uninformative_measurement(self):
        nm = NonlinearModel(lambda x, v: x + v, lambda x, e: e, [[1.0]], [[1.0]], 3.0, 3.0,
                            N=100_000)
        b = TBelief(np.array([0.3]), np.array([[1.5]]), 3.0)
        post, info = mc_measurement_update(b, [0.0], nm, seed=5, full_output=True)
        assert abs(info["sigma"][0, 1]) < 0.05
        np.testing.assert_allclose(post.xhat, b.xhat, atol=0.05)

    def test_deterministic(self):
        _, nm = linear_pair(N=2_000)
        b = TBelief(np.zeros(1), np.eye(1), 3.0)
        a = mc_time_update(b, nm, seed=9)
        c = mc_time_update(b, nm, seed=9)
        np.testing.assert_array_equal(a.P, c.P)

    def test_independent_sampling_mode(self):
        # marginal draws without a shared mixing variable give a wider fit
        lm, nm = linear_pair()
        b = TBelief(np.zeros(1), np.eye(1), 3.0)
        joint = mc_time_update(b, nm, seed=6)
        indep = mc_time_update(b, nm, seed=6, sampling="independent")
        assert indep.P[0, 0] > 1.1 * joint.P[0, 0]
        with pytest.raises(ValueError):
            mc_time_update(b, nm, sampling="bogus")

    def test_nonlinear_run(self):
        nm = NonlinearModel(lambda x, v: 0.9 * x + 0.2 * np.sin(x) + v,
                            lambda x, e: x + 0.1 * x ** 2 + e, [[0.3]], [[0.5]], 5.0, 5.0,
                            N=5_000)
        out = mc_run(nm, TBelief(np.zeros(1), np.eye(1), 5.0), [[0.2], [0.5], [-0.1]], seed=1)
        assert len(out) == 4
        assert all(np.isfinite(b.P).all() and b.P[0, 0] > 0 for b in out)
        assert out[-1].eta == 6.0
