"""Monte Carlo estimators of the two expectations driving the posterior update.

The update needs E_q[v * loglik(theta)] and E_q[(P - v v^T) * loglik(theta)]
with v = P (theta - mu).  Both multipliers are zero-mean scores of q, so a
constant subtracted from the log-likelihood leaves the estimators unbiased;
choosing that constant per component from the previous iteration's samples
is the control-variate scheme implemented here.  The control-variate
denominators (the score variances) are available analytically for the
Gaussian family, so only the covariance in the optimal coefficient has to
be estimated from samples.

Per-sample log-likelihood evaluations are independent and may run in
parallel upstream; the reduction here is a deterministic numpy sum, so a
fixed seed and configuration reproduce estimates bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientSamples, NonFiniteLoglik
from .gaussian import CovStructure, GaussianVariational

__all__ = [
    "GradientEstimate",
    "CvCoefficients",
    "estimate_naive",
    "estimate_cv",
    "cv_coefficients",
    "wishart1_cov",
    "analytic_var_m1",
    "analytic_var_m2",
    "evaluate_loglik",
]


@dataclass(frozen=True)
class GradientEstimate:
    """MC estimate of the two update expectations.

    ``g_mu_term`` estimates E[v * loglik]; ``g_prec_term`` estimates
    E[(P - v v^T) * loglik] and enters the precision update directly
    (equivalently it is -2 times the mean of g_m2 * loglik).  The draws and
    their log-likelihood values are retained so the next iteration can
    estimate control-variate coefficients from them.
    """

    g_mu_term: np.ndarray
    g_prec_term: np.ndarray
    n_samples: int
    samples: np.ndarray
    logliks: np.ndarray


@dataclass(frozen=True)
class CvCoefficients:
    """Per-component control-variate coefficients for both gradient blocks."""

    c1: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, q: GaussianVariational) -> "CvCoefficients":
        if q.structure is CovStructure.FULL:
            return cls(np.zeros(q.d), np.zeros((q.d, q.d)))
        return cls(np.zeros(q.d), np.zeros(q.d))


def evaluate_loglik(loglik: Callable[[np.ndarray], float], thetas: np.ndarray) -> np.ndarray:
    """Evaluate loglik at each row of ``thetas``.

    A callable exposing a ``many(thetas) -> array`` attribute is used in one
    vectorized call; otherwise rows are evaluated in sample-index order.
    Raises NonFiniteLoglik carrying the first offending draw.
    """
    many = getattr(loglik, "many", None)
    if many is not None:
        ell = np.asarray(many(thetas), dtype=float)
    else:
        ell = np.array([float(loglik(t)) for t in thetas], dtype=float)
    if ell.shape != (thetas.shape[0],):
        raise ValueError("log-likelihood evaluation returned a wrong shape")
    bad = ~np.isfinite(ell)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonFiniteLoglik(
            f"log-likelihood is {ell[i]} at sample index {i}", theta=thetas[i].copy()
        )
    return ell


def _estimate(
    q: GaussianVariational,
    loglik: Callable[[np.ndarray], float],
    n: int,
    rng: np.random.Generator,
    coeffs: Optional[CvCoefficients],
) -> GradientEstimate:
    if n < 1:
        raise ValueError("n must be >= 1")
    thetas = q.sample(n, rng)
    ell = evaluate_loglik(loglik, thetas)
    diff = thetas - q.mu
    if q.structure is CovStructure.FULL:
        v = diff @ q.prec
        g_mu = (ell @ v) / n
        mean_ell = float(np.mean(ell))
        vvl = np.einsum("si,sj,s->ij", v, v, ell) / n
        g_prec = q.prec * mean_ell - vvl
        if coeffs is not None:
            g_mu = g_mu - coeffs.c1 * np.mean(v, axis=0)
            vv = (v.T @ v) / n
            g_prec = g_prec - coeffs.c2 * (q.prec - vv)
        g_prec = 0.5 * (g_prec + g_prec.T)
    else:
        v = diff * q.prec
        g_mu = (ell @ v) / n
        v2 = v * v
        g_prec = (ell @ (q.prec - v2)) / n
        if coeffs is not None:
            g_mu = g_mu - coeffs.c1 * np.mean(v, axis=0)
            g_prec = g_prec - coeffs.c2 * np.mean(q.prec - v2, axis=0)
    return GradientEstimate(
        g_mu_term=g_mu,
        g_prec_term=g_prec,
        n_samples=n,
        samples=thetas,
        logliks=ell,
    )


def estimate_naive(
    q: GaussianVariational,
    loglik: Callable[[np.ndarray], float],
    n: int,
    rng: np.random.Generator,
) -> GradientEstimate:
    """Plain MC average of the score-times-loglik products."""
    return _estimate(q, loglik, n, rng, None)


def estimate_cv(
    q: GaussianVariational,
    loglik: Callable[[np.ndarray], float],
    n: int,
    rng: np.random.Generator,
    coeffs: CvCoefficients,
) -> GradientEstimate:
    """Control-variate estimator: each score component sees (loglik - c).

    With ``coeffs`` identically zero this reproduces ``estimate_naive``
    draw for draw.
    """
    return _estimate(q, loglik, n, rng, coeffs)


def _component_cov(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # sample covariance along axis 0, ddof=1, for arbitrary trailing shape
    n = a.shape[0]
    am = a - a.mean(axis=0)
    bm = b - b.mean(axis=0)
    return np.sum(am * bm, axis=0) / (n - 1)


def cv_coefficients(prev: GradientEstimate, q_prev: GaussianVariational) -> CvCoefficients:
    """Control-variate coefficients from the previous iteration's samples.

    Numerators are sample covariances of (score * loglik, score) under the
    distribution the samples were drawn from; denominators are the analytic
    score variances.  Components with zero analytic variance get c = 0.

    The exact optimal coefficient is a score-squared-weighted mean of the
    log-likelihood values and therefore lies inside their hull; a sampled
    numerator over the analytic denominator can escape it by large factors
    when the score has heavy tails, so the estimates are clamped back to
    the hull.  Any constant keeps the estimator unbiased.
    """
    if prev.n_samples < 2 or prev.samples.shape[0] < 2:
        raise InsufficientSamples("need at least 2 retained samples for CV coefficients")
    score = q_prev.expectation_score(prev.samples)
    ell = prev.logliks
    g1 = score.g_m1
    g2 = score.g_m2
    if g2.ndim == 3:
        ell_b = ell[:, None, None]
    else:
        ell_b = ell[:, None]
    num1 = _component_cov(g1 * ell[:, None], g1)
    num2 = _component_cov(g2 * ell_b, g2)
    den1 = analytic_var_m1(q_prev)
    den2 = analytic_var_m2(q_prev)
    lo, hi = float(np.min(ell)), float(np.max(ell))
    c1 = np.where(den1 > 0.0, num1 / np.where(den1 > 0.0, den1, 1.0), 0.0)
    c2 = np.where(den2 > 0.0, num2 / np.where(den2 > 0.0, den2, 1.0), 0.0)
    return CvCoefficients(c1=np.clip(c1, lo, hi), c2=np.clip(c2, lo, hi))


def wishart1_cov(sigma: np.ndarray, i: int, j: int, k: int, l: int) -> float:
    """Cov(V_ij, V_kl) for V ~ Wishart(1, sigma).

    Standard identity: sigma_ik sigma_jl + sigma_il sigma_jk.
    """
    return float(sigma[i, k] * sigma[j, l] + sigma[i, l] * sigma[j, k])


def analytic_var_m2(q: GaussianVariational) -> np.ndarray:
    """Elementwise variance of the m2-score, (P o P + diag(P) diag(P)^T) / 4.

    P V P ~ Wishart(1, P) for V the centered outer product, so the variances
    sit on the diagonal of that Wishart's covariance.  Diagonal structure
    returns the length-d vector p**2 / 2.
    """
    p = q.prec
    if q.structure is CovStructure.FULL:
        dp = np.diag(p)
        return 0.25 * (p * p + np.outer(dp, dp))
    return 0.5 * p * p


def analytic_var_m1(q: GaussianVariational) -> np.ndarray:
    """Per-component variance of the m1-score, diag(P (S + D) P).

    D = vcov(V z) with z = P mu and V ~ Wishart(1, S); its entries are
    assembled from the rank-one Wishart covariance through the quadratic
    form z^T Q^(i,j) z, exploiting the symmetry of D.  The block-Kronecker
    assembly of the same quantity needs a d^3 x d^3 array and is not
    materialized here.
    """
    if q.structure is CovStructure.DIAGONAL:
        # per-coordinate 1-d case: var = p^2 (s + 2 mu^2)
        return q.prec + 2.0 * q.mu**2 * q.prec**2
    d = q.d
    s = q.cov
    p = q.prec
    z = p @ q.mu
    dmat = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            # Q^(i,j)[h, k] = wishart1_cov(s, i, h, j, k)
            qij = s[i, j] * s + np.outer(s[:, j], s[i, :])
            dmat[i, j] = dmat[j, i] = z @ qij @ z
    return np.einsum("ij,jk,ki->i", p, s + dmat, p)
