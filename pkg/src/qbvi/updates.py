"""Posterior parameter update kernels.

All kernels consume a prior, the current posterior, and a MC gradient
estimate, and return a fresh posterior.  The precision moves first and the
mean update uses the *new* covariance (applied through a Cholesky solve).
Three safeguards keep the precision valid:

  * bounded step: cap the step size so a diagonal precision stays positive;
  * log transform: update the diagonal precision through -log(-lambda2),
    positive by construction;
  * retraction: move a full precision along the SPD manifold via
    R_P(xi) = P + xi + xi P^{-1} xi / 2.

Kernels are pure functions; the trainer owns the single mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, NotPositive, NotSPD, Singular
from .estimators import GradientEstimate
from .gaussian import CovStructure, GaussianVariational

__all__ = [
    "PriorSpec",
    "BoundedStep",
    "LogTransform",
    "Retraction",
    "PdStrategy",
    "step_full",
    "step_diag",
    "safe_beta",
    "step_diag_logxform",
    "retract_spd",
    "step_full_manifold",
]


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior N(mu0, S0) stored as mean and precision.

    ``prec0`` is a (d, d) SPD matrix or a positive length-d vector; the
    isotropic shortcut builds prec0 = tau * I with zero mean.
    """

    mu0: np.ndarray
    prec0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu0", np.atleast_1d(np.asarray(self.mu0, dtype=float)))
        object.__setattr__(self, "prec0", np.asarray(self.prec0, dtype=float))
        if self.prec0.ndim == 1 and np.any(self.prec0 <= 0.0):
            raise NotPositive("prior precision has a nonpositive entry")

    @classmethod
    def isotropic(cls, tau: float, d: int, structure: CovStructure = CovStructure.FULL) -> "PriorSpec":
        if tau <= 0.0:
            raise NotPositive("tau must be positive")
        if structure is CovStructure.FULL:
            return cls(np.zeros(d), tau * np.eye(d))
        return cls(np.zeros(d), np.full(d, float(tau)))

    @property
    def d(self) -> int:
        return self.mu0.size

    def prec_full(self) -> np.ndarray:
        return self.prec0 if self.prec0.ndim == 2 else np.diag(self.prec0)

    def prec_diag(self) -> np.ndarray:
        if self.prec0.ndim == 1:
            return self.prec0
        off = self.prec0 - np.diag(np.diag(self.prec0))
        if np.any(off != 0.0):
            raise ConfigError("full prior precision cannot drive a diagonal posterior")
        return np.diag(self.prec0)

    def as_gaussian(self, structure: CovStructure) -> GaussianVariational:
        prec = self.prec_full() if structure is CovStructure.FULL else self.prec_diag()
        return GaussianVariational(self.mu0, prec)

    def log_density(self, theta) -> Union[float, np.ndarray]:
        structure = CovStructure.FULL if self.prec0.ndim == 2 else CovStructure.DIAGONAL
        return self.as_gaussian(structure).log_density(theta)


@dataclass(frozen=True)
class BoundedStep:
    """Step-size bound for diagonal structure: beta = min(beta0, delta * beta_star)."""

    beta0: float = 0.1
    delta: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.beta0 < 1.0 and 0.0 < self.delta < 1.0):
            raise ConfigError("BoundedStep requires 0 < beta0 < 1 and 0 < delta < 1")


@dataclass(frozen=True)
class LogTransform:
    """Diagonal precision updated through -log(-lambda2); positive by construction."""


@dataclass(frozen=True)
class Retraction:
    """Full precision updated along the SPD manifold."""


PdStrategy = Union[BoundedStep, LogTransform, Retraction]


def _mean_update(
    q: GaussianVariational,
    prior: PriorSpec,
    est: GradientEstimate,
    beta: float,
    new_prec: np.ndarray,
) -> np.ndarray:
    if q.structure is CovStructure.FULL:
        rhs = prior.prec_full() @ (prior.mu0 - q.mu) + est.g_mu_term
        try:
            chol = np.linalg.cholesky(new_prec)
        except np.linalg.LinAlgError as exc:
            raise NotSPD("updated precision is not positive definite") from exc
        return q.mu + beta * cho_solve((chol, True), rhs)
    rhs = prior.prec_diag() * (prior.mu0 - q.mu) + est.g_mu_term
    return q.mu + beta * rhs / new_prec


def step_full(
    q: GaussianVariational, prior: PriorSpec, est: GradientEstimate, beta: float
) -> GaussianVariational:
    """Plain full-covariance update; raises NotSPD if the new precision fails."""
    if not (0.0 < beta < 1.0):
        raise ConfigError("beta must be in (0, 1)")
    prec_new = (1.0 - beta) * q.prec + beta * (prior.prec_full() + est.g_prec_term)
    prec_new = 0.5 * (prec_new + prec_new.T)
    mu_new = _mean_update(q, prior, est, beta, prec_new)
    return GaussianVariational(mu_new, prec_new)


def step_diag(
    q: GaussianVariational, prior: PriorSpec, est: GradientEstimate, beta: float
) -> GaussianVariational:
    """Elementwise analogue of step_full; raises NotPositive on an invalid entry."""
    if not (0.0 < beta < 1.0):
        raise ConfigError("beta must be in (0, 1)")
    prec_new = (1.0 - beta) * q.prec + beta * (prior.prec_diag() + est.g_prec_term)
    if np.any(prec_new <= 0.0):
        raise NotPositive("updated diagonal precision has a nonpositive entry")
    mu_new = _mean_update(q, prior, est, beta, prec_new)
    return GaussianVariational(mu_new, prec_new)


def safe_beta(s_inv: np.ndarray, h: np.ndarray, beta0: float, delta: float) -> float:
    """Largest safe step for the diagonal update s_inv + beta (h - s_inv).

    Components with h - s_inv >= 0 never bind; for the rest the update stays
    positive for beta < -s_inv / (h - s_inv), so the bound is delta times the
    smallest such ratio, capped at beta0.
    """
    s_inv = np.asarray(s_inv, dtype=float)
    h = np.asarray(h, dtype=float)
    gap = h - s_inv
    binding = gap < 0.0
    if not np.any(binding):
        return float(beta0)
    beta_star = np.min(-s_inv[binding] / gap[binding])
    return float(min(beta0, delta * beta_star))


def step_diag_logxform(
    q: GaussianVariational, prior: PriorSpec, est: GradientEstimate, beta: float
) -> GaussianVariational:
    """Diagonal update in xi = -log(-lambda2); the precision stays positive.

    xi_new = xi - beta * s * (s0_inv - s_inv + g_prec_term), then
    s_inv_new = 2 exp(-xi_new); the mean update uses the new covariance.
    """
    s = q.cov
    bracket = prior.prec_diag() - q.prec + est.g_prec_term
    xi = -np.log(0.5 * q.prec)
    xi_new = xi - beta * s * bracket
    # keep exp(-xi) inside double range; positivity must survive underflow
    prec_new = 2.0 * np.exp(-np.clip(xi_new, -700.0, 700.0))
    mu_new = _mean_update(q, prior, est, beta, prec_new)
    return GaussianVariational(mu_new, prec_new)


def retract_spd(s_inv: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Retract the symmetric tangent xi at the SPD point s_inv.

    Returns s_inv + xi + xi s_inv^{-1} xi / 2, which equals the congruence
    (s_inv + (s_inv+xi) s_inv^{-1} (s_inv+xi)) / 2 and is therefore SPD
    whenever s_inv + xi is nonsingular.
    """
    try:
        chol = cho_factor(s_inv, lower=True)
        w = cho_solve(chol, xi)
    except np.linalg.LinAlgError as exc:
        raise Singular("retraction base point is not invertible") from exc
    out = s_inv + xi + 0.5 * (xi @ w)
    return 0.5 * (out + out.T)


def step_full_manifold(
    q: GaussianVariational, prior: PriorSpec, est: GradientEstimate, beta: float
) -> GaussianVariational:
    """Full-covariance update through the SPD retraction.

    The tangent is beta * (prec0 - prec + g_prec_term); the displayed update
    carries no explicit step size, but an unscaled tangent makes early
    iterations overshoot, so beta multiplies it here.
    """
    xi = beta * (prior.prec_full() - q.prec + est.g_prec_term)
    xi = 0.5 * (xi + xi.T)
    prec_new = retract_spd(q.prec, xi)
    mu_new = _mean_update(q, prior, est, beta, prec_new)
    return GaussianVariational(mu_new, prec_new)
