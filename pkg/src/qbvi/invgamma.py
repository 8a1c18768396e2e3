"""Inverse-Gamma variational factor for a positive scalar (noise variance).

Used by the mean-field extension: the posterior factorizes as a Gaussian
block for the regression weights times an IG(alpha, beta) block for the
residual variance.  (alpha, beta) is not a natural parametrization, so the
natural-gradient score is obtained by solving against the 2x2 Fisher
information, which is available in closed form:

    FIM = [[trigamma(alpha), -1/beta], [-1/beta, alpha/beta^2]]

The determinant (alpha*trigamma(alpha) - 1)/beta^2 is positive for all
valid parameters, so the solve never degenerates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import DomainError, NonFiniteLoglik, NotPositive
from .estimators import GradientEstimate
from .gaussian import CovStructure, GaussianVariational
from .updates import PriorSpec, step_diag

__all__ = [
    "IGParams",
    "digamma",
    "trigamma",
    "ig_log_density",
    "ig_score",
    "ig_fim",
    "ig_natgrad_score",
    "ig_sample",
    "mf_step",
]

_SHIFT = 6.0

# asymptotic tail coefficients (Bernoulli-number series), highest order last
_DIGAMMA_TAIL = (
    -1.0 / 12.0,
    1.0 / 120.0,
    -1.0 / 252.0,
    1.0 / 240.0,
    -1.0 / 132.0,
    691.0 / 32760.0,
)
_TRIGAMMA_TAIL = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
)


def digamma(x: float) -> float:
    """psi(x) for x > 0 via upward recurrence plus the asymptotic series."""
    if x <= 0.0:
        raise DomainError("digamma defined here for x > 0 only")
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    tail = 0.0
    for coef in reversed(_DIGAMMA_TAIL):
        tail = inv2 * (coef + tail)
    return acc + math.log(x) - 0.5 / x + tail


def trigamma(x: float) -> float:
    """psi'(x) for x > 0 via upward recurrence plus the asymptotic series."""
    if x <= 0.0:
        raise DomainError("trigamma defined here for x > 0 only")
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = 0.0
    for coef in reversed(_TRIGAMMA_TAIL):
        tail = inv2 * (coef + tail)
    return acc + inv + 0.5 * inv2 + inv * tail


@dataclass(frozen=True)
class IGParams:
    """Inverse-Gamma shape/scale pair; both strictly positive."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise NotPositive("IG parameters must be strictly positive")

    @property
    def mean(self) -> float:
        """beta / (alpha - 1); defined only for alpha > 1."""
        if self.alpha <= 1.0:
            raise DomainError("IG mean undefined for alpha <= 1")
        return self.beta / (self.alpha - 1.0)


def _check_support(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise DomainError("Inverse-Gamma support is x > 0")
    return arr


def ig_log_density(x, p: IGParams):
    """log IG(x; alpha, beta); accepts a scalar or an array."""
    arr = _check_support(x)
    out = (
        p.alpha * math.log(p.beta)
        - math.lgamma(p.alpha)
        - (p.alpha + 1.0) * np.log(arr)
        - p.beta / arr
    )
    return float(out) if np.isscalar(x) else out


def ig_score(x, p: IGParams):
    """Gradient of log IG wrt (alpha, beta) at x; scalar or array input."""
    arr = _check_support(x)
    d_alpha = math.log(p.beta) - digamma(p.alpha) - np.log(arr)
    d_beta = p.alpha / p.beta - 1.0 / arr
    if np.isscalar(x):
        return float(d_alpha), float(d_beta)
    return d_alpha, d_beta


def ig_fim(p: IGParams) -> np.ndarray:
    """2x2 Fisher information [[psi'(a), -1/b], [-1/b, a/b^2]]."""
    return np.array(
        [
            [trigamma(p.alpha), -1.0 / p.beta],
            [-1.0 / p.beta, p.alpha / p.beta**2],
        ]
    )


def ig_natgrad_score(x, p: IGParams):
    """FIM^{-1} times the score, using the closed-form 2x2 inverse."""
    arr = _check_support(x)
    tg = trigamma(p.alpha)
    det = (p.alpha * tg - 1.0) / p.beta**2
    d_alpha = math.log(p.beta) - digamma(p.alpha) - np.log(arr)
    d_beta = p.alpha / p.beta - 1.0 / arr
    g_alpha = (p.alpha / p.beta**2 * d_alpha + d_beta / p.beta) / det
    g_beta = (d_alpha / p.beta + tg * d_beta) / det
    if np.isscalar(x):
        return float(g_alpha), float(g_beta)
    return g_alpha, g_beta


def ig_sample(p: IGParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n variates as reciprocals of Gamma(alpha, rate=beta) draws."""
    return 1.0 / rng.gamma(p.alpha, 1.0 / p.beta, size=n)


def _evaluate_joint_loglik(loglik, thetas: np.ndarray, sig2: np.ndarray) -> np.ndarray:
    many = getattr(loglik, "many", None)
    if many is not None:
        ell = np.asarray(many(thetas, sig2), dtype=float)
    else:
        ell = np.array(
            [float(loglik(t, float(s))) for t, s in zip(thetas, sig2)], dtype=float
        )
    bad = ~np.isfinite(ell)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonFiniteLoglik(
            f"log-likelihood is {ell[i]} at joint sample index {i}", theta=thetas[i].copy()
        )
    return ell


def ig_cv_coefficients(
    sig2_prev: np.ndarray, ell_prev: np.ndarray, q_v_prev: IGParams
) -> Tuple[float, float]:
    """Per-component CV coefficients for the IG natural-gradient block.

    Mirrors the Gaussian-block scheme: sampled covariance of
    (score * loglik, score) over the analytic score variance, which for the
    natural score is the corresponding diagonal entry of FIM^{-1}.  The
    estimates are clamped to the hull of the retained log-likelihoods (the
    exact optimum is a weighted mean of them).
    """
    ga, gb = ig_natgrad_score(sig2_prev, q_v_prev)
    n = sig2_prev.size
    tg = trigamma(q_v_prev.alpha)
    det = (q_v_prev.alpha * tg - 1.0) / q_v_prev.beta**2
    var_a = q_v_prev.alpha / q_v_prev.beta**2 / det
    var_b = tg / det
    lo, hi = float(np.min(ell_prev)), float(np.max(ell_prev))

    def coef(g, var):
        gm = g - g.mean()
        num = float(np.sum(gm * (g * ell_prev - np.mean(g * ell_prev))) / (n - 1))
        return float(np.clip(num / var, lo, hi))

    return coef(ga, var_a), coef(gb, var_b)


def mean_field_blocks(
    q_theta: GaussianVariational,
    q_v: IGParams,
    prior_theta: PriorSpec,
    prior_v: IGParams,
    loglik: Callable[[np.ndarray, float], float],
    n: int,
    rng: np.random.Generator,
    ig_coeffs: Tuple[float, float] = (0.0, 0.0),
) -> Tuple[GradientEstimate, float, float, float, np.ndarray]:
    """Joint draws and the gradient blocks of both factors.

    Returns the Gaussian-block estimate, the two IG natural-gradient
    entries (prior pull included), the sampled lower bound, and the drawn
    variances (retained for the next iteration's CV coefficients).  The
    IG scores have zero mean, so the per-component constants in
    ``ig_coeffs`` leave the estimates unbiased.
    """
    if q_theta.structure is not CovStructure.DIAGONAL:
        raise NotSPD("mean-field step is defined for diagonal Gaussian factors")
    thetas = q_theta.sample(n, rng)
    sig2 = ig_sample(q_v, n, rng)
    ell = _evaluate_joint_loglik(loglik, thetas, sig2)

    diff = thetas - q_theta.mu
    v = diff * q_theta.prec
    g_mu = (ell @ v) / n
    g_prec = (ell @ (q_theta.prec - v * v)) / n
    est = GradientEstimate(
        g_mu_term=g_mu, g_prec_term=g_prec, n_samples=n, samples=thetas, logliks=ell
    )

    ga, gb = ig_natgrad_score(sig2, q_v)
    g_alpha = prior_v.alpha - q_v.alpha + float(np.mean(ga * (ell - ig_coeffs[0])))
    g_beta = prior_v.beta - q_v.beta + float(np.mean(gb * (ell - ig_coeffs[1])))

    lb = float(
        np.mean(
            prior_theta.log_density(thetas)
            + ig_log_density(sig2, prior_v)
            + ell
            - q_theta.log_density(thetas)
            - ig_log_density(sig2, q_v)
        )
    )
    return est, g_alpha, g_beta, lb, sig2


def apply_ig_update(q_v: IGParams, g_alpha: float, g_beta: float, eps: float) -> IGParams:
    """Additive natural-gradient step on (alpha, beta).

    A step that would leave the parameter space gets its rate halved for
    that coordinate until the update is admissible.
    """
    alpha, beta = q_v.alpha, q_v.beta
    ea = eps
    for _ in range(80):
        if alpha + ea * g_alpha > 0.0:
            break
        ea *= 0.5
    eb = eps
    for _ in range(80):
        if beta + eb * g_beta > 0.0:
            break
        eb *= 0.5
    return IGParams(alpha + ea * g_alpha, beta + eb * g_beta)


def mf_step(
    q_theta: GaussianVariational,
    q_v: IGParams,
    prior_theta: PriorSpec,
    prior_v: IGParams,
    loglik: Callable[[np.ndarray, float], float],
    n: int,
    rng: np.random.Generator,
    eps: float,
) -> Tuple[GaussianVariational, IGParams]:
    """One joint mean-field update of the Gaussian and IG factors.

    Both factors are driven by the same joint draws.  The Gaussian factor
    takes a plain diagonal step, retried with a halved rate if the new
    precision is invalid; the IG factor takes the additive natural-gradient
    step with the same safeguard.
    """
    est, g_alpha, g_beta, _, _ = mean_field_blocks(
        q_theta, q_v, prior_theta, prior_v, loglik, n, rng
    )
    b = eps
    q_new = None
    for _ in range(11):
        try:
            q_new = step_diag(q_theta, prior_theta, est, b)
            break
        except NotPositive:
            b *= 0.5
    if q_new is None:
        raise NotPositive("diagonal step failed after 10 halvings")
    return q_new, apply_ig_update(q_v, g_alpha, g_beta, eps)
