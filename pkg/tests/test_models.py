"""Likelihood evaluators, transforms, and feature construction."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from qbvi import (
    Dataset,
    DimMismatch,
    DomainError,
    TooShort,
    TransformChain,
    apply_transforms,
    garch_loglik,
    gaussian_reg_loglik,
    har_features,
    logistic_loglik,
    simulate_garch,
)
from qbvi.baselines import mle_fit
from qbvi.models import (
    GARCH_CHAIN,
    garch_loglik_many,
    garch_variance_path,
    gaussian_reg_loglik_many,
    logistic_loglik_many,
)


def random_logistic_data(rng, n=50, p=3):
    X = rng.standard_normal((n, p))
    w = rng.standard_normal(p)
    y = (rng.uniform(size=n) < expit(X @ w)).astype(float)
    return Dataset(X=X, y=y)


class TestDataset:
    def test_rejects_nan(self):
        with pytest.raises(DimMismatch):
            Dataset(X=np.array([[1.0, np.nan]]), y=np.array([0.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(DimMismatch):
            Dataset(X=np.ones((3, 2)), y=np.ones(2))


class TestLogisticLoglik:
    def test_zero_coefficients(self):
        rng = np.random.default_rng(0)
        data = random_logistic_data(rng, n=40)
        assert_allclose(logistic_loglik(np.zeros(3), data), 40 * np.log(0.5))

    def test_single_row(self):
        data = Dataset(X=np.array([[1.0]]), y=np.array([1.0]))
        assert_allclose(logistic_loglik(np.zeros(1), data), np.log(0.5))

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        data = random_logistic_data(rng)
        theta = rng.standard_normal(3)
        ref = 0.0
        for xi, yi in zip(data.X, data.y):
            pi = 1.0 / (1.0 + np.exp(-xi @ theta))
            ref += yi * np.log(pi) + (1.0 - yi) * np.log(1.0 - pi)
        assert_allclose(logistic_loglik(theta, data), ref, atol=1e-10)

    def test_dim_mismatch(self):
        rng = np.random.default_rng(2)
        data = random_logistic_data(rng)
        with pytest.raises(DimMismatch):
            logistic_loglik(np.zeros(5), data)

    def test_stable_at_extreme_scores(self):
        data = Dataset(X=np.array([[100.0], [-100.0]]), y=np.array([1.0, 0.0]))
        val = logistic_loglik(np.array([1.0]), data)
        assert np.isfinite(val)
        assert abs(val) < 1e-20  # both rows classified perfectly

    def test_concavity_probe(self):
        rng = np.random.default_rng(3)
        data = random_logistic_data(rng, n=60)
        for _ in range(20):
            a = rng.standard_normal(3)
            b = rng.standard_normal(3)
            for t in np.linspace(0.05, 0.95, 20):
                chord = t * logistic_loglik(a, data) + (1 - t) * logistic_loglik(b, data)
                assert logistic_loglik(t * a + (1 - t) * b, data) >= chord - 1e-9

    def test_many_matches_scalar(self):
        rng = np.random.default_rng(4)
        data = random_logistic_data(rng)
        thetas = rng.standard_normal((7, 3))
        many = logistic_loglik_many(thetas, data)
        each = [logistic_loglik(t, data) for t in thetas]
        assert_allclose(many, each, rtol=1e-12)


class TestGaussianRegLoglik:
    def test_perfect_fit(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((12, 2))
        theta = np.array([0.5, -1.0])
        data = Dataset(X=X, y=X @ theta)
        assert_allclose(gaussian_reg_loglik(theta, 1.0, data), -6.0 * np.log(2 * np.pi))

    def test_single_zero_row(self):
        data = Dataset(X=np.zeros((1, 1)), y=np.zeros(1))
        assert_allclose(gaussian_reg_loglik(np.array([3.0]), 1.0, data), -0.5 * np.log(2 * np.pi))

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((30, 3))
        y = rng.standard_normal(30)
        data = Dataset(X=X, y=y)
        theta = rng.standard_normal(3)
        s2 = 1.7
        ref = 0.0
        for xi, yi in zip(X, y):
            ref += -0.5 * np.log(2 * np.pi * s2) - (yi - xi @ theta) ** 2 / (2 * s2)
        assert_allclose(gaussian_reg_loglik(theta, s2, data), ref, atol=1e-10)

    def test_rejects_bad_variance(self):
        data = Dataset(X=np.ones((2, 1)), y=np.ones(2))
        with pytest.raises(DomainError):
            gaussian_reg_loglik(np.ones(1), 0.0, data)

    def test_many_matches_scalar(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((20, 2))
        data = Dataset(X=X, y=rng.standard_normal(20))
        thetas = rng.standard_normal((5, 2))
        sig2 = rng.uniform(0.5, 2.0, 5)
        many = gaussian_reg_loglik_many(thetas, sig2, data)
        each = [gaussian_reg_loglik(t, s, data) for t, s in zip(thetas, sig2)]
        assert_allclose(many, each, rtol=1e-12)


class TestHarFeatures:
    def test_constant_series(self):
        data = har_features(np.full(30, 2.5))
        assert data.n == 8
        assert_allclose(data.X, np.tile([1.0, 2.5, 2.5, 2.5], (8, 1)))
        assert_allclose(data.y, 2.5)

    def test_boundary_single_row(self):
        rv = np.arange(1.0, 24.0)
        data = har_features(rv)
        assert data.n == 1
        assert_allclose(data.X[0], [1.0, 22.0, np.mean(rv[17:22]), np.mean(rv[0:22])])
        assert data.y[0] == 23.0

    def test_matches_bruteforce_windows(self):
        rng = np.random.default_rng(8)
        rv = rng.uniform(0.1, 1.0, 60)
        data = har_features(rv)
        for row in range(data.n):
            t = row + 22
            assert_allclose(
                data.X[row],
                [1.0, rv[t - 1], np.mean(rv[t - 5 : t]), np.mean(rv[t - 22 : t])],
                rtol=1e-12,
            )
            assert data.y[row] == rv[t]

    def test_too_short(self):
        with pytest.raises(TooShort):
            har_features(np.ones(22))


class TestGarch:
    def test_degenerate_recursion_is_iid_gaussian(self):
        rng = np.random.default_rng(9)
        r = rng.standard_normal(50)
        psi = np.array([0.0, -40.0, 0.0])  # alpha = beta = 0, omega = 0.5
        ref = np.sum(-0.5 * (np.log(2 * np.pi * 0.5) + r[1:] ** 2 / 0.5))
        assert_allclose(garch_loglik(psi, r), ref, rtol=1e-12)

    def test_transform_ranges(self):
        rng = np.random.default_rng(10)
        for _ in range(10_000):
            psi = rng.normal(0.0, 5.0, 3)
            omega, alpha, beta = apply_transforms(GARCH_CHAIN, psi)
            assert omega > 0.0 and alpha > 0.0 and beta > 0.0
            assert alpha + beta < 1.0

    def test_many_matches_scalar(self):
        rng = np.random.default_rng(11)
        r = rng.standard_normal(200) * 0.1
        psis = rng.normal(0.0, 2.0, (6, 3))
        assert_allclose(
            garch_loglik_many(psis, r), [garch_loglik(p, r) for p in psis], rtol=1e-10
        )

    def test_variance_path_consistent_with_loglik(self):
        rng = np.random.default_rng(12)
        r = rng.standard_normal(100) * 0.2
        psi = np.array([-6.0, 1.0, 1.5])
        h = garch_variance_path(psi, r)
        ref = np.sum(-0.5 * (np.log(2 * np.pi * h) + r[1:] ** 2 / h))
        assert_allclose(garch_loglik(psi, r), ref, rtol=1e-10)

    def test_too_short(self):
        with pytest.raises(TooShort):
            garch_loglik(np.zeros(3), np.array([1.0]))

    def test_simulation_recovery_via_mle(self):
        rng = np.random.default_rng(4)
        r = simulate_garch(1e-6, 0.1, 0.85, 2000, rng)
        v = float(np.clip(0.1 * np.var(r), 1e-8, 0.9))
        x0 = np.array([np.log(v / (1 - v)), 0.0, 1.0])
        psi_hat, _ = mle_fit(lambda ps: garch_loglik(ps, r), 3, x0)
        _, alpha_hat, beta_hat = apply_transforms(GARCH_CHAIN, psi_hat)
        assert abs(alpha_hat - 0.1) < 0.05
        assert abs(beta_hat - 0.85) < 0.05


class TestTransforms:
    def test_identity(self):
        chain = TransformChain(tags=("identity", "identity"))
        theta = np.array([1.5, -2.0])
        assert_allclose(apply_transforms(chain, theta), theta)

    def test_sigmoid_midpoint(self):
        chain = TransformChain(tags=("sigmoid",))
        assert_allclose(apply_transforms(chain, np.zeros(1)), [0.5])

    def test_exp(self):
        chain = TransformChain(tags=("exp",))
        assert_allclose(apply_transforms(chain, np.array([0.0])), [1.0])

    def test_garch_chain_at_zero(self):
        out = apply_transforms(GARCH_CHAIN, np.zeros(3))
        assert_allclose(out, [0.5, 0.25, 0.25])
        assert_allclose(out[1] + out[2], 0.5)  # alpha + beta = f(0)
