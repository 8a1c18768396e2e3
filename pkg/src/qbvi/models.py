"""Log-likelihood evaluators and parameter-transform chains.

Models evaluate the log-likelihood of raw (unconstrained) parameters on a
dataset; constrained quantities are produced by an attached transform
chain.  Every evaluator is pure and deterministic, with a vectorized
``*_many`` companion used by the samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .errors import ConfigError, DimMismatch, DomainError, TooShort

__all__ = [
    "Dataset",
    "TransformChain",
    "apply_transforms",
    "logistic_loglik",
    "gaussian_reg_loglik",
    "har_features",
    "garch_loglik",
    "garch_variance_path",
    "simulate_garch",
    "LogisticModel",
    "GaussianRegressionModel",
    "GarchModel",
    "ConstantModel",
    "GARCH_CHAIN",
]


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix plus target vector; rows are observations."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise DimMismatch("X must be 2-dimensional")
        if y.ndim != 1 or y.size != X.shape[0]:
            raise DimMismatch("y must be a vector with one entry per row of X")
        if X.shape[0] < 1:
            raise DimMismatch("need at least one observation")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DimMismatch("dataset contains NaN or infinite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class TransformChain:
    """Per-coordinate maps into a constrained domain, plus an optional
    composite rule for derived quantities (the GARCH coefficients)."""

    tags: tuple
    composite: Optional[str] = None


GARCH_CHAIN = TransformChain(tags=("sigmoid", "sigmoid", "sigmoid"), composite="garch")

_ELEMENTWISE = {
    "identity": lambda x: x,
    "sigmoid": expit,
    "exp": np.exp,
}


def apply_transforms(chain: TransformChain, theta_raw: np.ndarray) -> np.ndarray:
    """Map raw parameters through the chain; pure."""
    theta_raw = np.asarray(theta_raw, dtype=float)
    out = np.array(
        [_ELEMENTWISE[tag](theta_raw[i]) for i, tag in enumerate(chain.tags)], dtype=float
    )
    if chain.composite == "garch":
        f_om, f_al, f_be = out
        return np.array([f_om, f_al * (1.0 - f_be), f_al * f_be])
    return out


def identity_chain(d: int) -> TransformChain:
    return TransformChain(tags=("identity",) * d)


# -- logistic regression ------------------------------------------------


def logistic_loglik(theta: np.ndarray, data: Dataset) -> float:
    """Bernoulli log-likelihood sum_i [y z - log(1 + e^z)], z = x^T theta."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.p,):
        raise DimMismatch(f"theta has length {theta.size}, expected {data.p}")
    z = data.X @ theta
    return float(data.y @ z - np.sum(np.logaddexp(0.0, z)))


def logistic_loglik_many(thetas: np.ndarray, data: Dataset) -> np.ndarray:
    z = data.X @ thetas.T
    return data.y @ z - np.sum(np.logaddexp(0.0, z), axis=0)


# -- Gaussian linear regression ------------------------------------------


def gaussian_reg_loglik(theta: np.ndarray, sigma2: float, data: Dataset) -> float:
    """Gaussian log-likelihood with residual variance sigma2 > 0."""
    if sigma2 <= 0.0:
        raise DomainError("sigma2 must be positive")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.p,):
        raise DimMismatch(f"theta has length {theta.size}, expected {data.p}")
    resid = data.y - data.X @ theta
    n = data.n
    return float(-0.5 * n * np.log(2.0 * np.pi * sigma2) - resid @ resid / (2.0 * sigma2))


def gaussian_reg_loglik_many(thetas: np.ndarray, sig2s: np.ndarray, data: Dataset) -> np.ndarray:
    resid = data.y[:, None] - data.X @ thetas.T
    ssr = np.einsum("ij,ij->j", resid, resid)
    n = data.n
    return -0.5 * n * np.log(2.0 * np.pi * sig2s) - ssr / (2.0 * sig2s)


# -- HAR realized-volatility regression ----------------------------------


def har_features(rv: np.ndarray) -> Dataset:
    """Lagged design for realized volatility on daily/weekly/monthly means.

    Row t regresses rv_t on [1, rv_{t-1}, mean(rv_{t-5..t-1}),
    mean(rv_{t-22..t-1})]; rows exist for t = 23..T, so the output has
    T - 22 rows.
    """
    rv = np.asarray(rv, dtype=float)
    t_len = rv.size
    if t_len <= 22:
        raise TooShort("need more than 22 observations to build HAR features")
    csum = np.concatenate([[0.0], np.cumsum(rv)])

    def window_mean(width: int) -> np.ndarray:
        # mean over rv[t-width .. t-1] for output positions t = 22..T-1
        hi = np.arange(22, t_len)
        return (csum[hi] - csum[hi - width]) / width

    X = np.column_stack(
        [
            np.ones(t_len - 22),
            rv[21 : t_len - 1],
            window_mean(5),
            window_mean(22),
        ]
    )
    return Dataset(X=X, y=rv[22:])


# -- GARCH(1,1) ----------------------------------------------------------


def _garch_params(psi: np.ndarray):
    f = expit(np.asarray(psi, dtype=float))
    return f[..., 0], f[..., 1] * (1.0 - f[..., 2]), f[..., 1] * f[..., 2]


def garch_loglik(psi: np.ndarray, returns: np.ndarray) -> float:
    """GARCH(1,1) log-likelihood over t = 2..T in raw coordinates.

    psi maps componentwise through the sigmoid into (omega, alpha, beta)
    with alpha + beta < 1 guaranteed; the variance recursion starts at the
    sample variance of the series.
    """
    returns = np.asarray(returns, dtype=float)
    t_len = returns.size
    if t_len < 2:
        raise TooShort("need at least two observations")
    omega, alpha, beta = _garch_params(np.asarray(psi, dtype=float))
    omega, alpha, beta = float(omega), float(alpha), float(beta)
    r2 = (returns * returns).tolist()
    h = float(np.var(returns, ddof=1))
    ll = 0.0
    for t in range(1, t_len):
        h = omega + alpha * r2[t - 1] + beta * h
        ll -= 0.5 * (math.log(2.0 * math.pi * h) + r2[t] / h)
    return ll


def garch_loglik_many(psis: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Vectorized over parameter draws via a linear IIR filter per draw."""
    returns = np.asarray(returns, dtype=float)
    t_len = returns.size
    if t_len < 2:
        raise TooShort("need at least two observations")
    r2 = returns * returns
    h1 = float(np.var(returns, ddof=1))
    out = np.empty(psis.shape[0])
    for s in range(psis.shape[0]):
        omega, alpha, beta = _garch_params(psis[s])
        x = omega + alpha * r2[:-1]
        h = lfilter([1.0], [1.0, -beta], x, zi=np.array([beta * h1]))[0]
        out[s] = -0.5 * np.sum(np.log(2.0 * np.pi * h) + r2[1:] / h)
    return out


def garch_variance_path(psi: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Conditional variances h_t for t = 2..T at the given raw parameters."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < 2:
        raise TooShort("need at least two observations")
    omega, alpha, beta = _garch_params(np.asarray(psi, dtype=float))
    r2 = returns * returns
    x = omega + alpha * r2[:-1]
    h1 = float(np.var(returns, ddof=1))
    return lfilter([1.0], [1.0, -beta], x, zi=np.array([beta * h1]))[0]


def simulate_garch(
    omega: float, alpha: float, beta: float, t_len: int, rng: np.random.Generator, burn: int = 500
) -> np.ndarray:
    """Simulate a stationary GARCH(1,1) path (burn-in discarded)."""
    h = omega / (1.0 - alpha - beta)
    z = rng.standard_normal(t_len + burn)
    r = np.empty(t_len + burn)
    for t in range(t_len + burn):
        r[t] = np.sqrt(h) * z[t]
        h = omega + alpha * r[t] ** 2 + beta * h
    return r[burn:]


# -- model objects -------------------------------------------------------


class LogisticModel:
    """Binary classification; raw parameters are the coefficients."""

    mean_field = False

    def dim(self, data: Dataset) -> int:
        return data.p

    def n_obs(self, data: Dataset) -> int:
        return data.n

    def subset(self, data: Dataset, idx: np.ndarray) -> Dataset:
        return data.subset(idx)

    def chain(self, data: Dataset) -> TransformChain:
        return identity_chain(data.p)

    def loglik(self, theta, data: Dataset) -> float:
        return logistic_loglik(theta, data)

    def loglik_many(self, thetas, data: Dataset) -> np.ndarray:
        return logistic_loglik_many(thetas, data)

    @staticmethod
    def predict_proba(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return expit(X @ theta)


class GaussianRegressionModel:
    """Linear regression with unknown residual variance (mean-field factor)."""

    mean_field = True

    def dim(self, data: Dataset) -> int:
        return data.p

    def n_obs(self, data: Dataset) -> int:
        return data.n

    def subset(self, data: Dataset, idx: np.ndarray) -> Dataset:
        return data.subset(idx)

    def chain(self, data: Dataset) -> TransformChain:
        return identity_chain(data.p)

    def loglik(self, theta, sigma2, data: Dataset) -> float:
        return gaussian_reg_loglik(theta, sigma2, data)

    def loglik_many(self, thetas, sig2s, data: Dataset) -> np.ndarray:
        return gaussian_reg_loglik_many(thetas, sig2s, data)

    @staticmethod
    def predict(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return X @ theta


class GarchModel:
    """GARCH(1,1) on a return series; data is the 1-d return vector."""

    mean_field = False

    def dim(self, data) -> int:
        return 3

    def n_obs(self, data) -> int:
        return int(np.asarray(data).size)

    def subset(self, data, idx):
        raise ConfigError("GARCH likelihood is sequential; batching is not supported")

    def chain(self, data) -> TransformChain:
        return GARCH_CHAIN

    def loglik(self, psi, data) -> float:
        return garch_loglik(psi, data)

    def loglik_many(self, psis, data) -> np.ndarray:
        return garch_loglik_many(psis, data)


class ConstantModel:
    """Flat likelihood; the posterior must collapse onto the prior."""

    mean_field = False

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def dim(self, data: Dataset) -> int:
        return data.p

    def n_obs(self, data: Dataset) -> int:
        return data.n

    def subset(self, data: Dataset, idx: np.ndarray) -> Dataset:
        return data.subset(idx)

    def chain(self, data: Dataset) -> TransformChain:
        return identity_chain(data.p)

    def loglik(self, theta, data: Dataset) -> float:
        return self.value

    def loglik_many(self, thetas, data: Dataset) -> np.ndarray:
        return np.full(thetas.shape[0], self.value)
