"""Validation oracles: a posterior sampler, a derivative-free ML fitter,
and the evaluation metrics used in the comparison tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, NonFiniteLogPost

__all__ = [
    "Chain",
    "rwm_sample",
    "mle_fit",
    "metrics_classification",
    "metrics_regression",
]


@dataclass(frozen=True)
class Chain:
    """Random-walk Metropolis output; ``draws`` includes the burn-in prefix."""

    draws: np.ndarray
    acceptance_rate: float
    burn_in: int

    def posterior(self) -> np.ndarray:
        return self.draws[self.burn_in :]

    def mean(self) -> np.ndarray:
        return self.posterior().mean(axis=0)

    def var(self) -> np.ndarray:
        return self.posterior().var(axis=0, ddof=1)

    def batch_se(self, n_batches: int = 50) -> np.ndarray:
        """Batch-means standard error of the chain mean, per coordinate."""
        post = self.posterior()
        usable = (post.shape[0] // n_batches) * n_batches
        batches = post[:usable].reshape(n_batches, -1, post.shape[1]).mean(axis=1)
        return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


def rwm_sample(
    log_post: Callable[[np.ndarray], float],
    d: int,
    n_draws: int,
    rng: np.random.Generator,
    step_scale: float = 0.5,
    burn_in: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> Chain:
    """Random-walk Metropolis with scale adaptation during burn-in.

    Gaussian proposals theta' = theta + scale * z; the scale is nudged every
    100 proposals toward an acceptance rate in [0.2, 0.4] and frozen once
    burn-in ends, keeping the post-burn-in chain a proper Markov chain.
    """
    if n_draws < 1000:
        raise ConfigError("n_draws must be at least 1000")
    if burn_in is None:
        burn_in = n_draws // 5
    if not 0 <= burn_in < n_draws:
        raise ConfigError("burn_in must be in [0, n_draws)")
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).copy()
    lp = float(log_post(x))
    if not np.isfinite(lp):
        raise NonFiniteLogPost(f"log posterior is {lp} at the initial point")

    draws = np.empty((n_draws, d))
    scale = float(step_scale)
    block_accepts = 0
    post_accepts = 0
    for t in range(n_draws):
        prop = x + scale * rng.standard_normal(d)
        lp_prop = float(log_post(prop))
        if np.log(rng.uniform()) < lp_prop - lp:
            x, lp = prop, lp_prop
            if t < burn_in:
                block_accepts += 1
            else:
                post_accepts += 1
        draws[t] = x
        if t < burn_in and (t + 1) % 100 == 0:
            rate = block_accepts / 100.0
            if rate < 0.2:
                scale *= 0.7
            elif rate > 0.4:
                scale *= 1.3
            block_accepts = 0
    kept = n_draws - burn_in
    return Chain(draws=draws, acceptance_rate=post_accepts / kept, burn_in=burn_in)


def mle_fit(
    loglik: Callable[[np.ndarray], float],
    d: int,
    x0: np.ndarray,
    max_evals: int = 10_000,
    restarts: int = 4,
) -> tuple[np.ndarray, float]:
    """Maximize a log-likelihood with Nelder-Mead simplex search plus restarts.

    Each round runs until the simplex diameter drops below 1e-8 or the
    evaluation budget is spent; the next round restarts from the best point
    found, stopping early once a round no longer improves.  Always returns
    the best point seen.
    """
    x0 = np.asarray(x0, dtype=float)
    if not np.isfinite(loglik(x0)):
        raise ValueError("loglik must be finite at x0")

    def neg(theta):
        val = loglik(theta)
        return -val if np.isfinite(val) else np.inf

    best_x, best_f = x0, neg(x0)
    for _ in range(restarts + 1):
        res = minimize(
            neg,
            best_x,
            method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-8, "fatol": 1e-12},
        )
        if res.fun < best_f - 1e-10:
            best_x, best_f = res.x, res.fun
        else:
            if res.fun < best_f:
                best_x, best_f = res.x, res.fun
            break
    return np.asarray(best_x), -float(best_f)


def metrics_classification(probs: np.ndarray, labels: np.ndarray) -> Dict[str, float]:
    """Confusion-matrix metrics at threshold 0.5 plus the Bernoulli LL."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    preds = (probs >= 0.5).astype(float)
    tp = float(np.sum((preds == 1) & (labels == 1)))
    fp = float(np.sum((preds == 1) & (labels == 0)))
    fn = float(np.sum((preds == 0) & (labels == 1)))
    tn = float(np.sum((preds == 0) & (labels == 0)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    accuracy = (tp + tn) / labels.size
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    ll = float(np.sum(labels * np.log(probs) + (1.0 - labels) * np.log1p(-probs)))
    return {
        "precision": precision,
        "recall": recall,
        "accuracy": accuracy,
        "f1": f1,
        "ll": ll,
    }


def metrics_regression(preds: np.ndarray, targets: np.ndarray, sigma2: float) -> Dict[str, float]:
    """MSE plus the Gaussian log-likelihood of the residuals at sigma2."""
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    resid = targets - preds
    mse = float(np.mean(resid**2))
    n = targets.size
    ll = float(-0.5 * n * np.log(2.0 * np.pi * sigma2) - resid @ resid / (2.0 * sigma2))
    return {"mse": mse, "ll": ll}
