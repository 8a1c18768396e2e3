"""Outer optimization loop.

Each iteration draws from the current posterior, estimates the two update
expectations (with control variates from the previous iteration's draws
when enabled), clips and smooths the noisy blocks, and applies the
configured update kernel.  The sampled lower bound is tracked through a
moving average; training stops when the smoothed value has not improved
for ``patience`` iterations, and the reported posterior is the one at the
smoothed maximum.

The loop is a single-threaded state machine; identical configuration,
data, and seed reproduce the result bitwise.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NotPositive, NotSPD, Singular
from .estimators import (
    CvCoefficients,
    GradientEstimate,
    cv_coefficients,
    estimate_cv,
    estimate_naive,
    evaluate_loglik,
)
from .gaussian import CovStructure, GaussianVariational
from .invgamma import IGParams, apply_ig_update, ig_cv_coefficients, mean_field_blocks
from .updates import (
    BoundedStep,
    LogTransform,
    PdStrategy,
    PriorSpec,
    Retraction,
    safe_beta,
    step_diag,
    step_diag_logxform,
    step_full,
    step_full_manifold,
)

__all__ = [
    "TrainConfig",
    "FitResult",
    "estimate_lb",
    "smooth_lb",
    "should_stop",
    "clip_gradient",
    "momentum_update",
    "step_size",
    "fit",
    "fit_meanfield",
]

# deep enough that beta * clipped-gradient shrinks below any SPD precision's
# smallest eigenvalue; a degenerate-size step beats aborting the whole fit
_MAX_HALVINGS = 40


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the training loop."""

    prior: PriorSpec
    beta: float = 0.1
    t_prime: int = 800
    patience: int = 500
    window: int = 30
    momentum: float = 0.4
    clip_norm: float = 1000.0
    n_samples: int = 100
    max_iters: int = 1000
    batch_size: Optional[int] = None
    seed: int = 1
    structure: CovStructure = CovStructure.FULL
    pd_strategy: Optional[PdStrategy] = None
    cv_enabled: bool = False

    def __post_init__(self):
        if not (0.0 < self.beta < 1.0):
            raise ConfigError("beta must be in (0, 1)")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must be in [0, 1)")
        if self.window < 1 or self.patience < 1:
            raise ConfigError("window and patience must be >= 1")
        if self.clip_norm <= 0.0:
            raise ConfigError("clip_norm must be positive")
        if self.n_samples < 1 or self.max_iters < 1 or self.t_prime < 1:
            raise ConfigError("n_samples, max_iters, t_prime must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1 when set")
        strat = self.pd_strategy
        if isinstance(strat, (BoundedStep, LogTransform)) and self.structure is not CovStructure.DIAGONAL:
            raise ConfigError("bounded-step and log-transform strategies need diagonal structure")
        if isinstance(strat, Retraction) and self.structure is not CovStructure.FULL:
            raise ConfigError("the retraction strategy needs full structure")


@dataclass(frozen=True)
class FitResult:
    """Fitted posterior at the smoothed-LB maximum, plus the training trace."""

    best_q: GaussianVariational
    best_iter: int
    trace: np.ndarray  # columns: iteration, lb_raw, lb_smoothed
    exit_reason: str  # "patience" or "max_iters"
    mu_trace: np.ndarray
    best_ig: Optional[IGParams] = None
    sigma2_trace: Optional[np.ndarray] = None


# -- loop primitives ------------------------------------------------------


def estimate_lb(
    q: GaussianVariational,
    prior: PriorSpec,
    loglik: Callable[[np.ndarray], float],
    n: int,
    rng: np.random.Generator,
) -> float:
    """MC estimate of E_q[log p(theta) + log p(y|theta) - log q(theta)]."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    thetas = q.sample(n, rng)
    ell = evaluate_loglik(loglik, thetas)
    return float(np.mean(prior.log_density(thetas) + ell - q.log_density(thetas)))


def smooth_lb(values, window: int) -> float:
    """Mean of the last min(window, len) raw values."""
    tail = values[-window:] if window < len(values) else values
    return float(np.mean(tail))


def should_stop(smoothed, patience: int) -> bool:
    """True once the running maximum is more than ``patience`` entries old."""
    if not len(smoothed):
        return False
    best = int(np.argmax(smoothed))
    return (len(smoothed) - 1 - best) > patience


def clip_gradient(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Rescale to clip_norm when the l2 norm exceeds it; direction kept."""
    norm = float(np.linalg.norm(g))
    if norm > clip_norm:
        return g * (clip_norm / norm)
    return g


def momentum_update(g_bar: Optional[np.ndarray], g_hat: np.ndarray, gamma: float) -> np.ndarray:
    """g_bar <- gamma g_bar + (1 - gamma) g_hat, seeded with the first g_hat."""
    if g_bar is None:
        return g_hat
    return gamma * g_bar + (1.0 - gamma) * g_hat


def step_size(t: int, beta: float, t_prime: int) -> float:
    """Flat at beta until t_prime, then decays as beta * t_prime / t."""
    return beta * min(1.0, t_prime / t)


# -- internal helpers -----------------------------------------------------


class _BoundLoglik:
    """Binds a model to (a batch of) its data, with an optional N/M rescale."""

    def __init__(self, model, data, scale: float = 1.0):
        self._model = model
        self._data = data
        self._scale = scale

    def __call__(self, theta) -> float:
        return self._scale * self._model.loglik(theta, self._data)

    def many(self, thetas) -> np.ndarray:
        f = getattr(self._model, "loglik_many", None)
        if f is not None:
            return self._scale * np.asarray(f(thetas, self._data), dtype=float)
        return self._scale * np.array([self._model.loglik(t, self._data) for t in thetas])


class _BoundLoglik2:
    """Same for mean-field models whose likelihood takes (theta, sigma2)."""

    def __init__(self, model, data, scale: float = 1.0):
        self._model = model
        self._data = data
        self._scale = scale

    def __call__(self, theta, sigma2) -> float:
        return self._scale * self._model.loglik(theta, sigma2, self._data)

    def many(self, thetas, sig2s) -> np.ndarray:
        f = getattr(self._model, "loglik_many", None)
        if f is not None:
            return self._scale * np.asarray(f(thetas, sig2s, self._data), dtype=float)
        return self._scale * np.array(
            [self._model.loglik(t, float(s), self._data) for t, s in zip(thetas, sig2s)]
        )


class _EpochBatcher:
    """Without-replacement batches, reshuffled each epoch by the loop rng."""

    def __init__(self, n_total: int, batch_size: Optional[int], rng: np.random.Generator):
        self._n = n_total
        self._m = batch_size
        self._rng = rng
        self._order = None
        self._pos = 0

    def next(self):
        """Return (index array or None, loglik scale)."""
        if self._m is None or self._m >= self._n:
            return None, 1.0
        if self._order is None or self._pos >= self._n:
            self._order = self._rng.permutation(self._n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self._m]
        self._pos += len(idx)
        return idx, self._n / len(idx)


def _flatten_estimate(est: GradientEstimate) -> np.ndarray:
    return np.concatenate([est.g_mu_term, np.ravel(est.g_prec_term)])


def _rebuild_estimate(est: GradientEstimate, flat: np.ndarray, d: int) -> GradientEstimate:
    g_mu = flat[:d]
    g_prec = flat[d:].reshape(np.shape(est.g_prec_term))
    return dataclasses.replace(est, g_mu_term=g_mu, g_prec_term=g_prec)


def _cv_correct_diag(
    est: GradientEstimate, q: GaussianVariational, coeffs: CvCoefficients
) -> GradientEstimate:
    # subtract c * mean(score): turns the naive blocks into the CV blocks
    v = (est.samples - q.mu) * q.prec
    return dataclasses.replace(
        est,
        g_mu_term=est.g_mu_term - coeffs.c1 * v.mean(axis=0),
        g_prec_term=est.g_prec_term - coeffs.c2 * np.mean(q.prec - v * v, axis=0),
    )


def _apply_strategy(
    q: GaussianVariational,
    prior: PriorSpec,
    est: GradientEstimate,
    beta_t: float,
    strategy: Optional[PdStrategy],
) -> GaussianVariational:
    if isinstance(strategy, LogTransform):
        return step_diag_logxform(q, prior, est, beta_t)
    if isinstance(strategy, BoundedStep):
        h = prior.prec_diag() + est.g_prec_term
        b = safe_beta(q.prec, h, min(strategy.beta0, beta_t), strategy.delta)
        return step_diag(q, prior, est, b)
    plain = step_full if q.structure is CovStructure.FULL else step_diag
    kernel = step_full_manifold if isinstance(strategy, Retraction) else plain
    b = beta_t
    for attempt in range(_MAX_HALVINGS + 1):
        try:
            return kernel(q, prior, est, b)
        except (NotSPD, NotPositive, Singular):
            if attempt == _MAX_HALVINGS:
                raise
            b *= 0.5
    raise AssertionError("unreachable")


def _check_dims(prior: PriorSpec, d: int, structure: CovStructure):
    if prior.d != d:
        raise ConfigError(f"prior dimension {prior.d} does not match model dimension {d}")
    if structure is CovStructure.DIAGONAL:
        prior.prec_diag()  # raises if incompatible


def _default_init(prior: PriorSpec, structure: CovStructure) -> GaussianVariational:
    d = prior.d
    prec = np.eye(d) if structure is CovStructure.FULL else np.ones(d)
    return GaussianVariational(prior.mu0, prec)


# -- fitting ---------------------------------------------------------------


def fit(model, data, config: TrainConfig, init_q: Optional[GaussianVariational] = None) -> FitResult:
    """Run the loop for a Gaussian-only posterior and return the best fit."""
    if getattr(model, "mean_field", False):
        raise ConfigError("model needs an auxiliary variance factor; use fit_meanfield")
    d = model.dim(data)
    _check_dims(config.prior, d, config.structure)
    rng = np.random.default_rng(config.seed)
    q = init_q if init_q is not None else _default_init(config.prior, config.structure)
    if q.structure is not config.structure or q.d != d:
        raise ConfigError("initial posterior does not match the configured structure")

    batcher = _EpochBatcher(model.n_obs(data), config.batch_size, rng)
    prev: Optional[tuple[GradientEstimate, GaussianVariational]] = None
    g_bar: Optional[np.ndarray] = None
    raws: list[float] = []
    smoothed: list[float] = []
    mu_rows: list[np.ndarray] = []
    best_sm = -np.inf
    best_iter = 0
    best_q = q
    exit_reason = "max_iters"

    for t in range(1, config.max_iters + 1):
        idx, scale = batcher.next()
        bound = _BoundLoglik(model, data if idx is None else model.subset(data, idx), scale)
        if config.cv_enabled and prev is not None:
            coeffs = cv_coefficients(prev[0], prev[1])
            est = estimate_cv(q, bound, config.n_samples, rng, coeffs)
        else:
            est = estimate_naive(q, bound, config.n_samples, rng)
        prev = (est, q)

        lb = float(
            np.mean(
                config.prior.log_density(est.samples) + est.logliks - q.log_density(est.samples)
            )
        )
        raws.append(lb)
        sm = smooth_lb(raws, config.window)
        smoothed.append(sm)
        mu_rows.append(q.mu.copy())
        if sm > best_sm:
            best_sm, best_iter, best_q = sm, t, q

        flat = clip_gradient(_flatten_estimate(est), config.clip_norm)
        g_bar = momentum_update(g_bar, flat, config.momentum)
        stepped = _rebuild_estimate(est, g_bar, d)
        beta_t = step_size(t, config.beta, config.t_prime)
        q = _apply_strategy(q, config.prior, stepped, beta_t, config.pd_strategy)

        if should_stop(smoothed, config.patience):
            exit_reason = "patience"
            break

    iters = np.arange(1, len(raws) + 1, dtype=float)
    trace = np.column_stack([iters, raws, smoothed])
    return FitResult(
        best_q=best_q,
        best_iter=best_iter,
        trace=trace,
        exit_reason=exit_reason,
        mu_trace=np.vstack(mu_rows),
    )


def fit_meanfield(
    model,
    data,
    config: TrainConfig,
    ig_prior: IGParams = IGParams(3.0, 1.0),
    init_q: Optional[GaussianVariational] = None,
    init_ig: Optional[IGParams] = None,
) -> FitResult:
    """Joint loop for a diagonal Gaussian factor plus an IG variance factor.

    The Gaussian block goes through the same clip/momentum/strategy path as
    ``fit``; the IG block takes the plain additive natural-gradient step.
    """
    if not getattr(model, "mean_field", False):
        raise ConfigError("model has no variance factor; use fit")
    if config.structure is not CovStructure.DIAGONAL:
        raise ConfigError("the mean-field loop requires diagonal structure")
    d = model.dim(data)
    _check_dims(config.prior, d, config.structure)
    rng = np.random.default_rng(config.seed)
    q = init_q if init_q is not None else _default_init(config.prior, config.structure)
    igp = init_ig if init_ig is not None else ig_prior

    batcher = _EpochBatcher(model.n_obs(data), config.batch_size, rng)
    prev = None
    prev_ig = None  # (sig2 draws, logliks, IGParams) for the IG-block CV
    g_bar = None
    ig_bar = None
    raws: list[float] = []
    smoothed: list[float] = []
    mu_rows: list[np.ndarray] = []
    s2_rows: list[float] = []
    best_sm = -np.inf
    best_iter = 0
    best_q, best_ig = q, igp
    exit_reason = "max_iters"

    for t in range(1, config.max_iters + 1):
        idx, scale = batcher.next()
        bound = _BoundLoglik2(model, data if idx is None else model.subset(data, idx), scale)
        coeffs_ig = (
            ig_cv_coefficients(*prev_ig) if config.cv_enabled and prev_ig else (0.0, 0.0)
        )
        est, g_alpha, g_beta, lb, sig2 = mean_field_blocks(
            q, igp, config.prior, ig_prior, bound, config.n_samples, rng, ig_coeffs=coeffs_ig
        )
        if config.cv_enabled and prev is not None:
            est = _cv_correct_diag(est, q, cv_coefficients(prev[0], prev[1]))
        prev = (est, q)
        prev_ig = (sig2, est.logliks, igp)

        raws.append(lb)
        sm = smooth_lb(raws, config.window)
        smoothed.append(sm)
        mu_rows.append(q.mu.copy())
        s2_rows.append(igp.beta / (igp.alpha - 1.0) if igp.alpha > 1.0 else np.nan)
        if sm > best_sm:
            best_sm, best_iter, best_q, best_ig = sm, t, q, igp

        flat = clip_gradient(_flatten_estimate(est), config.clip_norm)
        g_bar = momentum_update(g_bar, flat, config.momentum)
        stepped = _rebuild_estimate(est, g_bar, d)
        beta_t = step_size(t, config.beta, config.t_prime)
        q = _apply_strategy(q, config.prior, stepped, beta_t, config.pd_strategy)
        ig_flat = clip_gradient(np.array([g_alpha, g_beta]), config.clip_norm)
        ig_bar = momentum_update(ig_bar, ig_flat, config.momentum)
        igp = apply_ig_update(igp, float(ig_bar[0]), float(ig_bar[1]), beta_t)

        if should_stop(smoothed, config.patience):
            exit_reason = "patience"
            break

    iters = np.arange(1, len(raws) + 1, dtype=float)
    trace = np.column_stack([iters, raws, smoothed])
    return FitResult(
        best_q=best_q,
        best_iter=best_iter,
        trace=trace,
        exit_reason=exit_reason,
        mu_trace=np.vstack(mu_rows),
        best_ig=best_ig,
        sigma2_trace=np.asarray(s2_rows),
    )
