import numpy as np
import pytest

from abmcalib.errors import DimensionError
from abmcalib.gp import (
    GaussianProcessSurrogate,
    KernelHyperparams,
    _neg_mll_and_grad,
    fit_gp,
    matern52,
    matern52_matrix,
)
from abmcalib.rng import make_rng


def unit_hyper(dims=1, noise=1e-12):
    return KernelHyperparams(1.0, np.ones(dims), noise)


class TestMatern:
    def test_zero_distance_gives_signal_variance(self):
        hyper = KernelHyperparams(2.5, np.array([0.7]), 1e-6)
        assert matern52(np.array([0.3]), np.array([0.3]), hyper) == pytest.approx(2.5)

    def test_decay_to_zero(self):
        hyper = unit_hyper()
        assert matern52(np.array([0.0]), np.array([500.0]), hyper) < 1e-100

    def test_unit_distance_closed_form(self):
        hyper = unit_hyper()
        expected = (1 + np.sqrt(5) + 5 / 3) * np.exp(-np.sqrt(5))
        value = matern52(np.array([0.0]), np.array([1.0]), hyper)
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(0.52399, abs=1e-5)

    def test_lengthscale_scaling(self):
        hyper = KernelHyperparams(1.0, np.array([2.0, 0.5]), 1e-6)
        a, b = np.array([0.0, 0.0]), np.array([2.0, 0.5])
        direct = matern52(a, b, hyper)
        scaled = matern52(np.array([0.0, 0.0]), np.array([1.0, 1.0]), unit_hyper(2))
        assert direct == pytest.approx(scaled, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            matern52(np.zeros(2), np.zeros(3), unit_hyper(2))


class TestMarginalLikelihoodGradient:
    def test_gradient_matches_finite_differences(self):
        rng = make_rng(0)
        X = rng.uniform(0, 1, (12, 2))
        y = np.sin(3 * X[:, 0]) + 0.1 * rng.standard_normal(12)
        y = y - y.mean()
        theta = np.array([np.log(0.8), np.log(0.4), np.log(0.6), np.log(1e-3)])
        _, grad = _neg_mll_and_grad(theta, X, y)
        eps = 1e-6
        for j in range(theta.size):
            up = theta.copy(); up[j] += eps
            dn = theta.copy(); dn[j] -= eps
            numeric = (_neg_mll_and_grad(up, X, y)[0] - _neg_mll_and_grad(dn, X, y)[0]) / (2 * eps)
            assert grad[j] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


class TestFit:
    def test_result_at_least_as_good_as_every_start(self):
        rng = make_rng(1)
        X = rng.uniform(0, 1, (20, 2))
        y = (X**2).sum(axis=1) + 0.05 * rng.standard_normal(20)
        model = fit_gp(X, y)
        assert np.all(model.log_marginal_likelihood_ >= model.fit_start_mlls_ - 1e-9)

    def test_duplicated_identical_observations_kill_noise(self):
        X = np.array([[0.5], [0.5]])
        y = np.array([1.3, 1.3])
        model = fit_gp(X, y)
        assert model.hyper_.noise_variance < 1e-4

    def test_white_noise_targets_absorbed_by_noise_term(self):
        rng = make_rng(3)
        X = np.linspace(0, 1, 40)[:, None]
        y = rng.standard_normal(40)
        model = fit_gp(X, y)
        ls_upper = np.exp(np.log(1e3))
        noise_share = model.hyper_.noise_variance / y.var()
        assert model.hyper_.lengthscales[0] >= 0.99 * ls_upper or noise_share >= 0.5

    def test_needs_two_records(self):
        with pytest.raises(DimensionError):
            fit_gp(np.array([[0.0]]), np.array([1.0]))


class TestPredict:
    def test_interpolates_at_high_precision(self):
        rng = make_rng(5)
        X = rng.uniform(0, 1, (8, 2))
        y = rng.uniform(0, 1, 8)
        hyper = KernelHyperparams(1.0, np.array([0.4, 0.4]), 1e-12)
        model = GaussianProcessSurrogate(hyper=hyper, optimize=False, jitter=1e-12).fit(X, y)
        pred = model.predict(X)
        np.testing.assert_allclose(pred.mean, y, atol=1e-6)

    def test_far_query_reverts_to_prior(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([3.0, 5.0])
        hyper = unit_hyper(noise=1e-10)
        model = GaussianProcessSurrogate(hyper=hyper, optimize=False).fit(X, y)
        pred = model.predict(np.array([[800.0]]))
        assert pred.mean[0] == pytest.approx(4.0, abs=1e-9)  # sample mean restored
        assert pred.sd[0] ** 2 == pytest.approx(hyper.signal_variance, abs=1e-9)

    def test_two_point_closed_form_oracle(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([1.0, 2.0])
        hyper = unit_hyper(noise=1e-12)
        model = GaussianProcessSurrogate(hyper=hyper, optimize=False, jitter=1e-12).fit(X, y)
        # independent 2x2 solve
        k01 = matern52(np.zeros(1), np.ones(1), hyper)
        K = np.array([[1.0 + 1e-12, k01], [k01, 1.0 + 1e-12]])
        kq = matern52_matrix(X, np.array([[0.5]]), hyper).ravel()
        expected_mean = kq @ np.linalg.solve(K, y - y.mean()) + y.mean()
        expected_var = 1.0 - kq @ np.linalg.solve(K, kq)
        pred = model.predict(np.array([[0.5]]))
        assert pred.mean[0] == pytest.approx(expected_mean, abs=1e-9)
        assert pred.sd[0] ** 2 == pytest.approx(expected_var, abs=1e-9)

    def test_posterior_variance_bounded_by_prior(self):
        rng = make_rng(8)
        X = rng.uniform(0, 1, (15, 2))
        y = rng.uniform(0, 2, 15)
        model = fit_gp(X, y)
        queries = rng.uniform(-0.5, 1.5, (200, 2))
        pred = model.predict(queries)
        assert np.all(pred.sd**2 <= model.hyper_.signal_variance + 1e-9)
        assert np.all(pred.sd >= 0.0)

    def test_query_dim_mismatch(self):
        model = GaussianProcessSurrogate(hyper=unit_hyper(2), optimize=False).fit(
            np.zeros((3, 2)), np.arange(3.0))
        with pytest.raises(DimensionError):
            model.predict(np.zeros((4, 3)))
