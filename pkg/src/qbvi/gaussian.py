"""Multivariate Gaussian variational family in three linked parametrizations.

A distribution is stored as a mean vector ``mu`` together with the precision
``P = S^{-1}`` (a full SPD matrix, or the positive diagonal as a vector).
The precision is canonical because the covariance update is native to that
space; the covariance ``S`` is materialized through Cholesky solves only.
Natural and expectation parameters are derived views:

    natural:      lambda1 = P mu          lambda2 = -P / 2
    expectation:  m1      = mu            m2      = S + mu mu^T

The score of ``log q`` with respect to the expectation parameters has a
closed form.  With ``v = P (theta - mu)`` and ``V = (theta-mu)(theta-mu)^T``:

    d log q / d m1 = P theta - (v v^T) mu
    d log q / d m2 = -(P - v v^T) / 2

Both blocks have zero mean under ``q`` itself, which is what makes them
usable simultaneously as update directions and as control variates.

Instances are immutable after construction and safe to share across
threads; sampling takes an explicit generator owned by the caller.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import NotPositive, NotSPD

__all__ = ["CovStructure", "GaussianVariational", "ScoreGrad"]

LOG_2PI = float(np.log(2.0 * np.pi))


class CovStructure(enum.Enum):
    """Covariance structure of the variational posterior."""

    FULL = "full"
    DIAGONAL = "diagonal"


def _symmetrize(a: np.ndarray) -> np.ndarray:
    # floating-point drift breaks exact symmetry after repeated updates
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class ScoreGrad:
    """Score of log q with respect to the expectation parameters.

    ``g_m2`` is a symmetric (d, d) matrix for full structure and a length-d
    vector for diagonal structure.  Batched evaluation prepends a sample
    axis to both blocks.
    """

    g_m1: np.ndarray
    g_m2: np.ndarray


class GaussianVariational:
    """Gaussian q(theta) = N(mu, S), stored as (mu, S^{-1})."""

    __slots__ = ("mu", "prec", "d", "structure", "_chol_prec", "_cov", "_chol_cov")

    def __init__(self, mu, prec):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        prec = np.asarray(prec, dtype=float)
        if mu.ndim != 1 or mu.size < 1:
            raise NotSPD("mean must be a vector of length >= 1")
        d = mu.size
        if prec.ndim == 2:
            if prec.shape != (d, d):
                raise NotSPD(f"precision shape {prec.shape} incompatible with d={d}")
            if not np.all(np.isfinite(prec)) or not np.all(np.isfinite(mu)):
                raise NotSPD("non-finite entries in parameters")
            prec = _symmetrize(prec)
            try:
                chol = np.linalg.cholesky(prec)
            except np.linalg.LinAlgError as exc:
                raise NotSPD("precision matrix is not positive definite") from exc
            structure = CovStructure.FULL
            # S via two triangular solves against the identity, never an explicit inverse
            eye = np.eye(d)
            cov = cho_solve((chol, True), eye)
            cov = _symmetrize(cov)
            chol_cov = np.linalg.cholesky(cov)
        elif prec.ndim == 1:
            if prec.shape != (d,):
                raise NotPositive(f"precision length {prec.size} incompatible with d={d}")
            if not np.all(np.isfinite(prec)) or not np.all(np.isfinite(mu)):
                raise NotPositive("non-finite entries in parameters")
            if np.any(prec <= 0.0):
                raise NotPositive("diagonal precision has a nonpositive entry")
            structure = CovStructure.DIAGONAL
            chol = np.sqrt(prec)
            cov = 1.0 / prec
            chol_cov = np.sqrt(cov)
        else:
            raise NotSPD("precision must be a matrix or a vector")

        self.mu = mu
        self.prec = prec
        self.d = d
        self.structure = structure
        self._chol_prec = chol
        self._cov = cov
        self._chol_cov = chol_cov

    # -- derived views -------------------------------------------------

    @property
    def cov(self) -> np.ndarray:
        """Covariance S, same storage layout as ``prec``."""
        return self._cov

    def cov_dense(self) -> np.ndarray:
        """Covariance as a dense (d, d) matrix regardless of structure."""
        if self.structure is CovStructure.FULL:
            return self._cov
        return np.diag(self._cov)

    @property
    def log_det_prec(self) -> float:
        if self.structure is CovStructure.FULL:
            return 2.0 * float(np.sum(np.log(np.diag(self._chol_prec))))
        return float(np.sum(np.log(self.prec)))

    def to_natural(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (lambda1, lambda2) = (P mu, -P/2)."""
        if self.structure is CovStructure.FULL:
            lam1 = self.prec @ self.mu
        else:
            lam1 = self.prec * self.mu
        return lam1, -0.5 * self.prec

    @classmethod
    def from_natural(cls, lam1, lam2) -> "GaussianVariational":
        """Invert the natural-parameter map.

        Raises NotSPD (full) / NotPositive (diagonal) when -2 lambda2 is not
        a valid precision.
        """
        lam1 = np.atleast_1d(np.asarray(lam1, dtype=float))
        lam2 = np.asarray(lam2, dtype=float)
        prec = -2.0 * lam2
        if prec.ndim == 2:
            prec = _symmetrize(prec)
            try:
                chol = np.linalg.cholesky(prec)
            except np.linalg.LinAlgError as exc:
                raise NotSPD("-2*lambda2 is not positive definite") from exc
            mu = cho_solve((chol, True), lam1)
        else:
            if np.any(prec <= 0.0):
                raise NotPositive("-2*lambda2 has a nonpositive entry")
            mu = lam1 / prec
        return cls(mu, prec)

    def to_expectation(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (m1, m2) = (mu, S + mu mu^T).

        ``m2`` is a (d, d) matrix for full structure; for diagonal structure
        it is the vector s + mu**2.
        """
        if self.structure is CovStructure.FULL:
            m2 = self._cov + np.outer(self.mu, self.mu)
        else:
            m2 = self._cov + self.mu**2
        return self.mu.copy(), m2

    # -- sampling and densities ----------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n samples, one per row; deterministic given the generator state."""
        if n < 1:
            raise ValueError("n must be >= 1")
        z = rng.standard_normal((n, self.d))
        if self.structure is CovStructure.FULL:
            return self.mu + z @ self._chol_cov.T
        return self.mu + z * self._chol_cov

    def log_density(self, theta) -> float | np.ndarray:
        """log N(theta; mu, S); accepts a single vector or an (n, d) batch."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        t = np.atleast_2d(theta)
        diff = t - self.mu
        if self.structure is CovStructure.FULL:
            # diff^T P diff = |L^T diff|^2 with P = L L^T
            w = self._chol_prec.T @ diff.T
            quad = np.einsum("ij,ij->j", w, w)
        else:
            quad = np.sum(diff * diff * self.prec, axis=1)
        out = -0.5 * (self.d * LOG_2PI - self.log_det_prec + quad)
        return float(out[0]) if single else out

    def expectation_score(self, theta) -> ScoreGrad:
        """Closed-form score wrt (m1, m2); accepts a vector or an (n, d) batch."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        t = np.atleast_2d(theta)
        diff = t - self.mu
        if self.structure is CovStructure.FULL:
            v = diff @ self.prec
            pt = t @ self.prec
            g1 = pt - v * (v @ self.mu)[:, None]
            vv = v[:, :, None] * v[:, None, :]
            g2 = -0.5 * (self.prec[None, :, :] - vv)
        else:
            v = diff * self.prec
            g1 = t * self.prec - v * v * self.mu
            g2 = -0.5 * (self.prec - v * v)
        if single:
            return ScoreGrad(g_m1=g1[0], g_m2=g2[0])
        return ScoreGrad(g_m1=g1, g_m2=g2)

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"GaussianVariational(d={self.d}, structure={self.structure.value}, "
            f"mu={np.array2string(self.mu, precision=4)})"
        )
