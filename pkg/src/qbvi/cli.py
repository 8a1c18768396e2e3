"""Command-line front end: CSV ingestion, splitting, fitting, persistence.

Outputs per run directory:

  result.json   posterior (mu, precision row-major), best iteration, exit
                reason, config echo, seed and derived sub-seeds
  trace.csv     iter, lb_raw, lb_smoothed, train_ll, test_ll
  metrics.csv   rows = metric, columns = method x split

All randomness flows from the single seed: the split uses seed+1 and the
MCMC baseline seed+2, so a repeated run reproduces every file bitwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .baselines import metrics_classification, metrics_regression, mle_fit, rwm_sample
from .errors import ConfigError, ParseError, QbviError
from .gaussian import CovStructure, GaussianVariational
from .invgamma import IGParams, ig_log_density
from .models import (
    ConstantModel,
    Dataset,
    GarchModel,
    GaussianRegressionModel,
    LogisticModel,
    apply_transforms,
    garch_loglik,
    garch_variance_path,
    gaussian_reg_loglik,
    har_features,
    logistic_loglik,
)
from .training import FitResult, TrainConfig, fit, fit_meanfield
from .updates import BoundedStep, LogTransform, PriorSpec, Retraction

__all__ = ["RunSpec", "load_csv", "split_data", "run", "load_result", "main"]

TASKS = ("logistic", "linreg", "har", "garch", "smoke")


@dataclass(frozen=True)
class RunSpec:
    """One experiment: task, data file, split, training config, outputs."""

    task: str
    data_path: Path
    output_dir: Path
    config: TrainConfig
    split: float = 0.75
    compare: Tuple[str, ...] = ()
    has_header: bool = True
    intercept: bool = True
    ig_prior: IGParams = IGParams(3.0, 1.0)
    mcmc_draws: int = 50_000

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not (0.0 < self.split < 1.0):
            raise ConfigError("split must be in (0, 1)")
        for name in self.compare:
            if name not in ("mcmc", "mle"):
                raise ConfigError(f"unknown baseline {name!r}")


# -- data loading ----------------------------------------------------------


def _read_matrix(path: Path, has_header: bool) -> np.ndarray:
    if not Path(path).exists():
        raise ParseError(f"data file not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=",")
        for r, row in enumerate(reader, start=1):
            if r == 1 and has_header:
                continue
            if not row:
                continue
            parsed = []
            for c, cell in enumerate(row, start=1):
                cell = cell.strip()
                if not cell:
                    raise ParseError(f"{path}: empty cell at row {r}, col {c}")
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric cell {cell!r} at row {r}, col {c}"
                    ) from None
                if not math.isfinite(val):
                    raise ParseError(f"{path}: non-finite value at row {r}, col {c}")
                parsed.append(val)
            rows.append(parsed)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0])
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {width}")
    return np.asarray(rows, dtype=float)


def load_csv(path: Path, has_header: bool = True) -> Dataset:
    """Parse a comma-separated numeric table; the last column is the target."""
    mat = _read_matrix(path, has_header)
    if mat.shape[1] < 2:
        raise ParseError(f"{path}: need at least two columns (features, target)")
    return Dataset(X=mat[:, :-1], y=mat[:, -1])


def load_series(path: Path, has_header: bool = True) -> np.ndarray:
    """Load the last column of a CSV file as a one-dimensional series."""
    return _read_matrix(path, has_header)[:, -1]


def split_data(
    data: Dataset, frac: float, time_series: bool, rng: Optional[np.random.Generator] = None
) -> Tuple[Dataset, Dataset]:
    """Train/test split: seeded permutation, or chronological for series rows."""
    n = data.n
    n_train = math.ceil(frac * n)
    if n_train >= n:
        raise ConfigError("split leaves an empty test set")
    if time_series:
        order = np.arange(n)
    else:
        if rng is None:
            raise ConfigError("cross-sectional split needs a generator")
        order = rng.permutation(n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def _split_series(series: np.ndarray, frac: float) -> Tuple[np.ndarray, np.ndarray]:
    n_train = math.ceil(frac * series.size)
    if n_train >= series.size:
        raise ConfigError("split leaves an empty test set")
    return series[:n_train], series[n_train:]


def _with_intercept(data: Dataset) -> Dataset:
    return Dataset(X=np.column_stack([np.ones(data.n), data.X]), y=data.y)


# -- serialization ---------------------------------------------------------


def _strategy_tag(config: TrainConfig) -> dict:
    s = config.pd_strategy
    if s is None:
        return {"kind": "plain"}
    if isinstance(s, BoundedStep):
        return {"kind": "bounded", "beta0": s.beta0, "delta": s.delta}
    if isinstance(s, LogTransform):
        return {"kind": "logxform"}
    return {"kind": "retraction"}


def _config_echo(config: TrainConfig) -> dict:
    return {
        "beta": config.beta,
        "t_prime": config.t_prime,
        "patience": config.patience,
        "window": config.window,
        "momentum": config.momentum,
        "clip_norm": config.clip_norm,
        "n_samples": config.n_samples,
        "max_iters": config.max_iters,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "structure": config.structure.value,
        "pd_strategy": _strategy_tag(config),
        "cv_enabled": config.cv_enabled,
        "prior": {
            "mu0": config.prior.mu0.tolist(),
            "prec0": config.prior.prec0.tolist(),
        },
    }


def _write_result(path: Path, spec: RunSpec, result: FitResult) -> None:
    q = result.best_q
    payload = {
        "task": spec.task,
        "seed": spec.config.seed,
        "sub_seeds": {"split": spec.config.seed + 1, "mcmc": spec.config.seed + 2},
        "exit_reason": result.exit_reason,
        "best_iter": result.best_iter,
        "posterior": {
            "structure": q.structure.value,
            "mu": q.mu.tolist(),
            "prec": q.prec.tolist(),
        },
        "ig_posterior": (
            None
            if result.best_ig is None
            else {"alpha": result.best_ig.alpha, "beta": result.best_ig.beta}
        ),
        "config": _config_echo(spec.config),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_result(path: Path) -> Tuple[GaussianVariational, Optional[IGParams]]:
    """Rebuild the persisted posterior objects from result.json."""
    with open(path) as fh:
        payload = json.load(fh)
    post = payload["posterior"]
    prec = np.asarray(post["prec"], dtype=float)
    q = GaussianVariational(np.asarray(post["mu"], dtype=float), prec)
    igp = payload.get("ig_posterior")
    return q, None if igp is None else IGParams(igp["alpha"], igp["beta"])


def _write_trace(path: Path, result: FitResult, train_ll, test_ll) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "lb_raw", "lb_smoothed", "train_ll", "test_ll"])
        for k in range(result.trace.shape[0]):
            writer.writerow(
                [
                    int(result.trace[k, 0]),
                    repr(float(result.trace[k, 1])),
                    repr(float(result.trace[k, 2])),
                    repr(float(train_ll[k])),
                    repr(float(test_ll[k])),
                ]
            )


def _write_metrics(path: Path, table: Dict[str, Dict[str, float]]) -> None:
    # table: column name -> {metric: value}; rows follow the first column's order
    columns = list(table.keys())
    metric_names = list(next(iter(table.values())).keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + columns)
        for m in metric_names:
            writer.writerow([m] + [repr(float(table[c].get(m, float("nan")))) for c in columns])


# -- task execution --------------------------------------------------------


def _sigma2_of(result: FitResult, k: Optional[int] = None) -> float:
    if result.sigma2_trace is None:
        raise ConfigError("no variance factor in this fit")
    if k is None:
        return result.best_ig.beta / (result.best_ig.alpha - 1.0)
    return float(result.sigma2_trace[k])


def _run_logistic(spec: RunSpec, report: dict) -> None:
    data = load_csv(spec.data_path, spec.has_header)
    if spec.intercept:
        data = _with_intercept(data)
    if not np.all(np.isin(data.y, (0.0, 1.0))):
        raise ConfigError("logistic task needs binary {0,1} targets")
    rng_split = np.random.default_rng(spec.config.seed + 1)
    train, test = split_data(data, spec.split, time_series=False, rng=rng_split)
    model = LogisticModel()
    result = fit(model, train, spec.config)

    train_ll = [logistic_loglik(mu, train) for mu in result.mu_trace]
    test_ll = [logistic_loglik(mu, test) for mu in result.mu_trace]
    report["trace_ll"] = (train_ll, test_ll)

    mu_hat = result.best_q.mu
    table = {
        "qbvi_train": metrics_classification(model.predict_proba(mu_hat, train.X), train.y),
        "qbvi_test": metrics_classification(model.predict_proba(mu_hat, test.X), test.y),
    }
    if "mle" in spec.compare:
        theta_ml, _ = mle_fit(lambda th: logistic_loglik(th, train), train.p, np.zeros(train.p))
        table["mle_train"] = metrics_classification(model.predict_proba(theta_ml, train.X), train.y)
        table["mle_test"] = metrics_classification(model.predict_proba(theta_ml, test.X), test.y)
    if "mcmc" in spec.compare:
        prior = spec.config.prior

        def log_post(th):
            return float(prior.log_density(th)) + logistic_loglik(th, train)

        chain = rwm_sample(
            log_post, train.p, spec.mcmc_draws, np.random.default_rng(spec.config.seed + 2)
        )
        th = chain.mean()
        table["mcmc_train"] = metrics_classification(model.predict_proba(th, train.X), train.y)
        table["mcmc_test"] = metrics_classification(model.predict_proba(th, test.X), test.y)
    report["metrics"] = table
    report["result"] = result


def _run_regression(spec: RunSpec, report: dict) -> None:
    if spec.task == "har":
        series = load_series(spec.data_path, spec.has_header)
        data = har_features(series)
        rng_split = None
        time_series = True
    else:
        data = load_csv(spec.data_path, spec.has_header)
        if spec.intercept:
            data = _with_intercept(data)
        rng_split = np.random.default_rng(spec.config.seed + 1)
        time_series = False
    train, test = split_data(data, spec.split, time_series=time_series, rng=rng_split)
    model = GaussianRegressionModel()
    result = fit_meanfield(model, train, spec.config, ig_prior=spec.ig_prior)

    def ll_at(mu, s2, dset):
        if not np.isfinite(s2) or s2 <= 0:
            return float("nan")
        return gaussian_reg_loglik(mu, s2, dset)

    train_ll = [
        ll_at(result.mu_trace[k], result.sigma2_trace[k], train)
        for k in range(result.mu_trace.shape[0])
    ]
    test_ll = [
        ll_at(result.mu_trace[k], result.sigma2_trace[k], test)
        for k in range(result.mu_trace.shape[0])
    ]
    report["trace_ll"] = (train_ll, test_ll)

    mu_hat, s2_hat = result.best_q.mu, _sigma2_of(result)
    table = {
        "qbvi_train": metrics_regression(train.X @ mu_hat, train.y, s2_hat),
        "qbvi_test": metrics_regression(test.X @ mu_hat, test.y, s2_hat),
    }
    if "mle" in spec.compare:
        n = train.n

        def profile_ll(th):
            ssr = float(np.sum((train.y - train.X @ th) ** 2))
            return -0.5 * n * (math.log(2.0 * math.pi * ssr / n) + 1.0)

        theta_ml, _ = mle_fit(profile_ll, train.p, np.zeros(train.p))
        s2_ml = float(np.sum((train.y - train.X @ theta_ml) ** 2)) / n
        table["mle_train"] = metrics_regression(train.X @ theta_ml, train.y, s2_ml)
        table["mle_test"] = metrics_regression(test.X @ theta_ml, test.y, s2_ml)
    if "mcmc" in spec.compare:
        prior = spec.config.prior
        igp = spec.ig_prior

        def log_post(x):
            th, u = x[:-1], x[-1]
            s2 = math.exp(u)
            return (
                float(prior.log_density(th))
                + float(ig_log_density(s2, igp))
                + u  # Jacobian of sigma2 = exp(u)
                + gaussian_reg_loglik(th, s2, train)
            )

        chain = rwm_sample(
            log_post,
            train.p + 1,
            spec.mcmc_draws,
            np.random.default_rng(spec.config.seed + 2),
        )
        th = chain.mean()[:-1]
        s2 = float(np.mean(np.exp(chain.posterior()[:, -1])))
        table["mcmc_train"] = metrics_regression(train.X @ th, train.y, s2)
        table["mcmc_test"] = metrics_regression(test.X @ th, test.y, s2)
    report["metrics"] = table
    report["result"] = result


def _run_garch(spec: RunSpec, report: dict) -> None:
    series = load_series(spec.data_path, spec.has_header)
    train, test = _split_series(series, spec.split)
    model = GarchModel()
    result = fit(model, train, spec.config)

    train_ll = [garch_loglik(mu, train) for mu in result.mu_trace]
    test_ll = [garch_loglik(mu, test) for mu in result.mu_trace]
    report["trace_ll"] = (train_ll, test_ll)

    def garch_metrics(psi, segment):
        h = garch_variance_path(psi, segment)
        r2 = segment[1:] ** 2
        return {"mse": float(np.mean((h - r2) ** 2)), "ll": garch_loglik(psi, segment)}

    mu_hat = result.best_q.mu
    table = {
        "qbvi_train": garch_metrics(mu_hat, train),
        "qbvi_test": garch_metrics(mu_hat, test),
    }
    if "mle" in spec.compare:
        psi_ml, _ = mle_fit(lambda ps: garch_loglik(ps, train), 3, np.zeros(3))
        table["mle_train"] = garch_metrics(psi_ml, train)
        table["mle_test"] = garch_metrics(psi_ml, test)
    if "mcmc" in spec.compare:
        prior = spec.config.prior

        def log_post(ps):
            return float(prior.log_density(ps)) + garch_loglik(ps, train)

        chain = rwm_sample(
            log_post, 3, spec.mcmc_draws, np.random.default_rng(spec.config.seed + 2)
        )
        psi_mc = chain.mean()
        table["mcmc_train"] = garch_metrics(psi_mc, train)
        table["mcmc_test"] = garch_metrics(psi_mc, test)
    report["metrics"] = table
    report["result"] = result
    report["transformed"] = apply_transforms(model.chain(train), mu_hat).tolist()


def _run_smoke(spec: RunSpec, report: dict) -> None:
    data = load_csv(spec.data_path, spec.has_header)
    rng_split = np.random.default_rng(spec.config.seed + 1)
    train, test = split_data(data, spec.split, time_series=False, rng=rng_split)
    model = ConstantModel(0.0)
    result = fit(model, train, spec.config)
    zeros = [0.0] * result.mu_trace.shape[0]
    report["trace_ll"] = (zeros, zeros)
    report["metrics"] = {"qbvi_train": {"ll": 0.0}, "qbvi_test": {"ll": 0.0}}
    report["result"] = result


def run(spec: RunSpec) -> int:
    """Execute a run spec; returns a process exit code."""
    try:
        report: dict = {}
        if spec.task == "logistic":
            _run_logistic(spec, report)
        elif spec.task in ("linreg", "har"):
            _run_regression(spec, report)
        elif spec.task == "garch":
            _run_garch(spec, report)
        else:
            _run_smoke(spec, report)
        out = Path(spec.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        result: FitResult = report["result"]
        train_ll, test_ll = report["trace_ll"]
        _write_result(out / "result.json", spec, result)
        _write_trace(out / "trace.csv", result, train_ll, test_ll)
        _write_metrics(out / "metrics.csv", report["metrics"])
        return 0
    except (QbviError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# -- argument parsing --------------------------------------------------------


def _build_config(args, d: Optional[int] = None) -> TrainConfig:
    structure = CovStructure.FULL if args.structure == "full" else CovStructure.DIAGONAL
    strategy = {
        "plain": None,
        "bounded": BoundedStep(beta0=args.beta, delta=args.bounded_delta),
        "logxform": LogTransform(),
        "retraction": Retraction(),
    }[args.pd_strategy]
    prior = PriorSpec.isotropic(args.tau, d, structure)
    return TrainConfig(
        prior=prior,
        beta=args.beta,
        t_prime=args.t_prime,
        patience=args.patience,
        window=args.window,
        momentum=args.momentum,
        clip_norm=args.clip,
        n_samples=args.ns,
        max_iters=args.max_iters,
        batch_size=args.batch_size,
        seed=args.seed,
        structure=structure,
        pd_strategy=strategy,
        cv_enabled=args.cv,
    )


def _infer_dim(args) -> int:
    if args.task == "garch":
        return 3
    if args.task == "har":
        return 4
    mat = _read_matrix(Path(args.data), not args.no_header)
    p = mat.shape[1] - 1
    if args.task in ("logistic", "linreg") and not args.no_intercept:
        p += 1
    return p


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qbvi",
        description="Fit a Bayesian model with natural-gradient black-box VI.",
    )
    parser.add_argument("--task", required=True, choices=TASKS)
    parser.add_argument("--data", required=True, help="CSV input, last column = target")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--split", type=float, default=0.75)
    parser.add_argument("--beta", type=float, default=0.1, help="base learning rate")
    parser.add_argument("--patience", type=int, default=500)
    parser.add_argument("--window", type=int, default=30, help="LB smoothing window")
    parser.add_argument("--momentum", type=float, default=0.4)
    parser.add_argument("--clip", type=float, default=1000.0, help="gradient norm cap")
    parser.add_argument("--tau", type=float, default=0.2, help="isotropic prior precision")
    parser.add_argument("--ns", type=int, default=100, help="MC samples per iteration")
    parser.add_argument("--max-iters", type=int, default=1000)
    parser.add_argument("--t-prime", type=int, default=800, help="step decay start")
    parser.add_argument(
        "--pd-strategy",
        choices=("plain", "bounded", "logxform", "retraction"),
        default="plain",
    )
    parser.add_argument("--bounded-delta", type=float, default=0.9)
    parser.add_argument("--structure", choices=("full", "diagonal"), default=None)
    parser.add_argument("--cv", action="store_true", help="enable control variates")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--compare", default="", help="comma list from {mcmc,mle}")
    parser.add_argument("--mcmc-draws", type=int, default=50_000)
    parser.add_argument("--ig-alpha0", type=float, default=3.0)
    parser.add_argument("--ig-beta0", type=float, default=1.0)
    parser.add_argument("--no-header", action="store_true")
    parser.add_argument("--no-intercept", action="store_true")
    args = parser.parse_args(argv)

    if args.structure is None:
        args.structure = "diagonal" if args.task in ("linreg", "har") else "full"
        if args.pd_strategy in ("bounded", "logxform"):
            args.structure = "diagonal"
        elif args.pd_strategy == "retraction":
            args.structure = "full"

    try:
        d = _infer_dim(args)
        config = _build_config(args, d)
        compare = tuple(s for s in args.compare.split(",") if s)
        spec = RunSpec(
            task=args.task,
            data_path=Path(args.data),
            output_dir=Path(args.out),
            config=config,
            split=args.split,
            compare=compare,
            has_header=not args.no_header,
            intercept=not args.no_intercept,
            ig_prior=IGParams(args.ig_alpha0, args.ig_beta0),
            mcmc_draws=args.mcmc_draws,
        )
    except (QbviError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(spec)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
