"""Inverse-Gamma factor: special functions, score, FIM, mean-field step."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from oracles import fd_grad
from scipy.integrate import quad
from scipy.special import digamma as scipy_digamma
from scipy.special import polygamma

from qbvi import (
    DomainError,
    GaussianVariational,
    IGParams,
    PriorSpec,
    digamma,
    ig_fim,
    ig_log_density,
    ig_natgrad_score,
    ig_sample,
    ig_score,
    mf_step,
    trigamma,
)
from qbvi.invgamma import apply_ig_update

EULER_GAMMA = 0.5772156649015329


class TestSpecialFunctions:
    def test_digamma_against_reference(self):
        xs = np.concatenate([np.geomspace(1e-3, 1.0, 40), np.linspace(1.0, 50.0, 60)])
        for x in xs:
            assert abs(digamma(float(x)) - scipy_digamma(x)) < 1e-10 * max(
                1.0, abs(scipy_digamma(x))
            )

    def test_trigamma_against_reference(self):
        xs = np.concatenate([np.geomspace(1e-3, 1.0, 40), np.linspace(1.0, 50.0, 60)])
        for x in xs:
            assert abs(trigamma(float(x)) - polygamma(1, x)) < 1e-10 * max(
                1.0, polygamma(1, x)
            )

    def test_domain(self):
        with pytest.raises(DomainError):
            digamma(0.0)
        with pytest.raises(DomainError):
            trigamma(-1.0)


class TestLogDensity:
    def test_unit_case(self):
        assert_allclose(ig_log_density(1.0, IGParams(1.0, 1.0)), -1.0)

    def test_integrates_to_one(self):
        val, err = quad(lambda x: np.exp(ig_log_density(x, IGParams(3.0, 1.0))), 0.0, np.inf)
        assert err < 1e-8
        assert abs(val - 1.0) < 1e-6

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            ig_log_density(0.0, IGParams(1.0, 1.0))
        with pytest.raises(DomainError):
            ig_log_density(-2.0, IGParams(1.0, 1.0))


class TestScore:
    def test_euler_mascheroni_case(self):
        d_alpha, d_beta = ig_score(1.0, IGParams(1.0, 1.0))
        assert_allclose(d_alpha, EULER_GAMMA, rtol=1e-10)
        assert_allclose(d_beta, 0.0, atol=1e-14)

    def test_finite_difference(self):
        p = IGParams(2.5, 1.7)
        for x in (0.3, 1.0, 4.2):
            grad = fd_grad(
                lambda ab: ig_log_density(x, IGParams(ab[0], ab[1])),
                np.array([p.alpha, p.beta]),
            )
            d_alpha, d_beta = ig_score(x, p)
            assert_allclose([d_alpha, d_beta], grad, rtol=1e-6)

    def test_zero_mean(self):
        rng = np.random.default_rng(0)
        p = IGParams(3.0, 2.0)
        x = ig_sample(p, 100_000, rng)
        da, db = ig_score(x, p)
        for comp in (da, db):
            se = comp.std(ddof=1) / np.sqrt(comp.size)
            assert abs(comp.mean()) < 3 * se


class TestFim:
    def test_unit_case(self):
        fim = ig_fim(IGParams(1.0, 1.0))
        assert_allclose(fim, [[np.pi**2 / 6.0, -1.0], [-1.0, 1.0]], rtol=1e-10)

    def test_matches_score_outer_product(self):
        # information identity: FIM = E[score score^T]; this also settles
        # that the closed-form matrix is the FIM itself, not its inverse
        rng = np.random.default_rng(1)
        p = IGParams(3.0, 1.5)
        x = ig_sample(p, 1_000_000, rng)
        da, db = ig_score(x, p)
        s = np.stack([da, db])
        mc = s @ s.T / x.size
        assert_allclose(mc, ig_fim(p), rtol=0.02)

    def test_matches_negative_hessian(self):
        # the (alpha, beta)-Hessian of log q does not depend on x
        p = IGParams(2.0, 3.0)
        for x in (0.5, 2.0):
            def score_at(ab, x=x):
                return np.array(ig_score(x, IGParams(ab[0], ab[1])))

            h = np.zeros((2, 2))
            eps = 1e-6
            for j in range(2):
                e = np.zeros(2)
                e[j] = eps
                base = np.array([p.alpha, p.beta])
                h[:, j] = (score_at(base + e) - score_at(base - e)) / (2 * eps)
            assert_allclose(-h, ig_fim(p), rtol=1e-5)

    def test_determinant_positive_on_grid(self):
        for a in np.geomspace(0.1, 50.0, 25):
            for b in np.geomspace(0.1, 50.0, 25):
                assert np.linalg.det(ig_fim(IGParams(a, b))) > 0.0


class TestNaturalScore:
    def test_frozen_unit_example(self):
        # linear-solve oracle: solve([[pi^2/6, -1], [-1, 1]], [gamma, 0])
        ga, gb = ig_natgrad_score(1.0, IGParams(1.0, 1.0))
        assert_allclose([ga, gb], [0.8949995, 0.8949995], atol=1e-6)

    def test_solve_roundtrip(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = IGParams(rng.uniform(0.5, 8.0), rng.uniform(0.5, 8.0))
            x = float(ig_sample(p, 1, rng)[0])
            g = np.array(ig_natgrad_score(x, p))
            assert_allclose(ig_fim(p) @ g, np.array(ig_score(x, p)), atol=1e-12)

    def test_matches_generic_linear_solve(self):
        p = IGParams(4.2, 0.9)
        x = 1.3
        expected = np.linalg.solve(ig_fim(p), np.array(ig_score(x, p)))
        assert_allclose(np.array(ig_natgrad_score(x, p)), expected, rtol=1e-12)

    def test_zero_mean(self):
        rng = np.random.default_rng(3)
        p = IGParams(3.0, 2.0)
        x = ig_sample(p, 100_000, rng)
        ga, gb = ig_natgrad_score(x, p)
        for comp in (ga, gb):
            se = comp.std(ddof=1) / np.sqrt(comp.size)
            assert abs(comp.mean()) < 3 * se


class TestSampling:
    def test_moments(self):
        rng = np.random.default_rng(4)
        p = IGParams(5.0, 2.0)
        x = ig_sample(p, 400_000, rng)
        assert_allclose(x.mean(), p.mean, rtol=0.02)
        # Var = beta^2 / ((a-1)^2 (a-2))
        assert_allclose(x.var(), p.beta**2 / ((p.alpha - 1) ** 2 * (p.alpha - 2)), rtol=0.05)


class TestMeanFieldStep:
    def test_prior_fixed_point_constant_likelihood(self):
        rng = np.random.default_rng(5)
        prior_theta = PriorSpec(np.zeros(2), np.full(2, 0.5))
        prior_v = IGParams(3.0, 1.0)
        q = GaussianVariational(np.ones(2), np.full(2, 4.0))
        igp = IGParams(8.0, 5.0)
        for _ in range(400):
            q, igp = mf_step(
                q, igp, prior_theta, prior_v, lambda th, s2: 0.0, 10, rng, 0.2
            )
        assert np.max(np.abs(q.prec - 0.5)) < 1e-9
        assert np.max(np.abs(q.mu)) < 1e-9
        assert abs(igp.alpha - prior_v.alpha) < 1e-9
        assert abs(igp.beta - prior_v.beta) < 1e-9

    def test_clamp_keeps_parameters_positive(self):
        igp = IGParams(0.5, 0.5)
        out = apply_ig_update(igp, -100.0, -100.0, 0.5)
        assert out.alpha > 0.0 and out.beta > 0.0

    def test_short_conjugate_run_moves_toward_posterior(self):
        # loose sanity; the acceptance suite runs the strict 5% version
        rng = np.random.default_rng(6)
        m_known = 0.7
        y = m_known + np.sqrt(2.0) * rng.standard_normal(30)
        prior_v = IGParams(3.0, 1.0)
        a_star = prior_v.alpha + y.size / 2.0
        b_star = prior_v.beta + 0.5 * np.sum((y - m_known) ** 2)

        igp = prior_v
        center = 0.0
        for t in range(1, 1501):
            sig2 = ig_sample(igp, 200, rng)
            ell = -0.5 * y.size * np.log(2 * np.pi * sig2) - np.sum(
                (y - m_known) ** 2
            ) / (2 * sig2)
            ga, gb = ig_natgrad_score(sig2, igp)
            g_alpha = prior_v.alpha - igp.alpha + np.mean(ga * (ell - center))
            g_beta = prior_v.beta - igp.beta + np.mean(gb * (ell - center))
            eps = 0.1 * min(1.0, 300.0 / t)
            igp = apply_ig_update(igp, g_alpha, g_beta, eps)
            center = float(np.mean(ell))
        assert abs(igp.alpha - a_star) / a_star < 0.15
        assert abs(igp.beta - b_star) / b_star < 0.15
