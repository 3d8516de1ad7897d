"""
Command-line surface.

Subcommands: ``sample`` (joint path/derivative draws to CSV),
``kernel-table`` (approximation-error statistics of equal-string kernels),
``fit`` / ``predict`` (maximum marginal likelihood regression),
``mcmc`` (reversible-jump sampler with chain artifacts), and
``experiment`` (the synthetic benchmark suite).

Data files are CSV with a header row; configs and persisted models are
JSON.  Exit codes: 0 success, 2 input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .kernels import kernel_from_config, kernel_to_config, is_stationary
from .kernel_sampler import KernelSamplerConfig, run_kernel_sampler
from .likelihoods import GammaUtilityLikelihood, GaussianLikelihood, PortfolioSpec
from .mcmc import McmcConfig, NonFiniteLikelihoodError, run_sampler
from .membrane import link_from_config, link_to_config, symmetric_sum
from .regression import (
    ConditioningError,
    FitConfig,
    RegressionModel,
    fit_mle,
    make_model,
    predict,
)
from .string_core import (
    StringModel,
    kernel_error_table,
    partition_from_config,
    partition_to_config,
)
from .experiments import EXPERIMENT_IDS, ExperimentSpec, run_experiment

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(Exception):
    """Malformed config or data; mapped to exit code 2."""


def _load_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: line {exc.lineno}, column {exc.colno}") from exc


def _load_table(path: str, min_cols: int = 2) -> tuple[list[str], np.ndarray]:
    """CSV with a header row; returns (column names, float matrix)."""
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            rows = list(reader)
    except FileNotFoundError as exc:
        raise InputError(f"data file not found: {path}") from exc
    if not rows:
        raise InputError(f"{path}: empty file")
    header = rows[0]
    try:
        float(header[0])
        raise InputError(f"{path}: missing header row")
    except (ValueError, IndexError):
        pass
    if len(header) < min_cols:
        raise InputError(f"{path}: expected at least {min_cols} columns, found {len(header)}")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: ragged rows do not match the header")
    return header, data


def _write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    config = _load_json(args.config)
    try:
        partition = partition_from_config(config)
        model = StringModel(partition)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{args.config}: {exc}") from exc
    string_times = config.get("string_times")
    if string_times is None and "points_per_string" in config:
        n = int(config["points_per_string"])
        bt = partition.boundary_times
        string_times = [
            np.linspace(a, b, n + 2)[1:-1] for a, b in zip(bt, bt[1:])
        ]
    sample = model.sample_paths(string_times, np.random.default_rng(args.seed))
    _write_csv(args.output, ["t", "z", "dz"], np.column_stack([sample.times, sample.values]))
    print(f"wrote {sample.times.size} rows to {args.output}")
    return EXIT_OK


def cmd_kernel_table(args) -> int:
    kernel = _kernel_from_cli(args.kernel)
    if not is_stationary(kernel):
        raise InputError(f"kernel-table requires a stationary kernel, got {kernel.family}")
    counts = _parse_counts(args.strings)
    rows = kernel_error_table(kernel, counts, grid=args.grid)
    table = [[kernel.family, r["strings"], r["min"], r["avg"], r["max"]] for r in rows]
    if args.output:
        _write_csv(args.output, ["kernel", "strings", "min", "avg", "max"], table)
    for row in table:
        print(f"{row[0]:>10}  K={row[1]:<3d}  min={row[2]:.4f}  avg={row[3]:.4f}  max={row[4]:.4f}")
    return EXIT_OK


_CLI_KERNELS = {
    "se": {"family": "se", "params": {"variance": 1.0, "lengthscale": 0.5}},
    "rq": {"family": "rq", "params": {"variance": 1.0, "lengthscale": 0.5, "alpha": 1.0}},
    "rq5": {"family": "rq", "params": {"variance": 1.0, "lengthscale": 0.5, "alpha": 5.0}},
    "matern32": {"family": "matern32", "params": {"variance": 1.0, "lengthscale": 0.5}},
    "matern52": {"family": "matern52", "params": {"variance": 1.0, "lengthscale": 0.5}},
    "periodic": {
        "family": "periodic",
        "params": {"variance": 1.0, "lengthscale": 0.5, "period": 1.0},
    },
}


def _kernel_from_cli(spec: str):
    if spec in _CLI_KERNELS:
        return kernel_from_config(_CLI_KERNELS[spec])
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        return kernel_from_config(_load_json(spec))
    raise InputError(f"unknown kernel {spec!r}; use one of {sorted(_CLI_KERNELS)} or a JSON file")


def _parse_counts(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise InputError(f"invalid string counts {text!r}") from exc


def _model_from_fitted(config: dict) -> RegressionModel:
    try:
        partitions = [partition_from_config(p) for p in config["partitions"]]
        link = link_from_config(config.get("link", {"kind": "sum"}), len(partitions))
        noise = {tuple(item["cell"]): item["variance"] for item in config["noise"]}
        x = np.asarray(config["training_data"]["x"], dtype=float)
        y = np.asarray(config["training_data"]["y"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed fitted-model config: {exc}") from exc
    return RegressionModel(tuple(partitions), link, noise, x, y)


def _model_to_fitted(model: RegressionModel, extra: dict) -> dict:
    return {
        "partitions": [partition_to_config(p) for p in model.partitions],
        "link": link_to_config(model.link),
        "noise": [
            {"cell": list(cell), "variance": var} for cell, var in sorted(model.noise.items())
        ],
        "training_data": {"x": model.x.tolist(), "y": model.y.tolist()},
        **extra,
    }


def cmd_fit(args) -> int:
    header, data = _load_table(args.data)
    x, y = data[:, :-1], data[:, -1]
    config = _load_json(args.config)
    try:
        partitions = [partition_from_config(p) for p in config["partitions"]]
        link = link_from_config(config.get("link", {"kind": "sum"}), len(partitions))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.config}: {exc}") from exc
    if x.shape[1] != len(partitions):
        raise InputError(
            f"data has {x.shape[1]} feature columns but config defines {len(partitions)} partitions"
        )
    model = make_model(x, y, partitions, link=link)
    fit_cfg = FitConfig(
        restarts=config.get("restarts", 5),
        seed=args.seed,
        optimize_boundaries=config.get("optimize_boundaries", False),
        maxiter=config.get("maxiter", 200),
    )
    result = fit_mle(model, fit_cfg)
    payload = _model_to_fitted(
        result.model, {"log_marginal": result.log_marginal, "converged": result.converged}
    )
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
    print(f"fit complete: log marginal likelihood {result.log_marginal:.4f} -> {args.output}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _model_from_fitted(_load_json(args.model))
    header, data = _load_table(args.data, min_cols=1)
    d = model.x.shape[1]
    x_star = data[:, :d]
    mean, cov = predict(model, x_star)
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    cols = [f"x{j}" for j in range(d)] + ["mean", "std"]
    _write_csv(args.output, cols, np.column_stack([x_star, mean, std]))
    print(f"wrote {mean.size} predictions to {args.output}")
    return EXIT_OK


def cmd_mcmc(args) -> int:
    config = _load_json(args.config)
    header, data = _load_table(args.data)
    x, y = data[:, :-1], data[:, -1]
    lik_cfg = config.get("likelihood", {"kind": "gaussian"})
    kind = lik_cfg.get("kind", "gaussian")
    x_test = None
    if args.test_data:
        _, test_tab = _load_table(args.test_data, min_cols=1)
        x_test = test_tab[:, : x.shape[1]]

    if config.get("variant") == "kernel-regression":
        ks_cfg = KernelSamplerConfig(
            iterations=int(config.get("iters", 500)),
            burnin=int(config.get("burnin", 250)),
            thin=int(config.get("thin", 1)),
            seed=args.seed,
            kernel_family=config.get("kernel_family", "se"),
            alpha=float(config.get("alpha", 1.0)),
            beta=float(config.get("beta", 1.0)),
            rho=float(config.get("rho", 1.0)),
        )
        chain = run_kernel_sampler(x, y, ks_cfg, x_test=x_test)
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_csv(
            outdir / "chain.csv",
            ["iteration"] + [f"fstar_{i}" for i in range(chain.f_star.shape[1])],
            np.column_stack([chain.kept_iterations, chain.f_star]),
        )
        _write_csv(
            outdir / "boundary_trace.csv",
            ["iteration", "dimension", "position"],
            [(it, dim, pos) for it, dim, arr in chain.boundary_records for pos in arr],
        )
        print(f"kernel-regression chain: {chain.f.shape[0]} draws -> {outdir}")
        return EXIT_OK

    if kind == "gaussian":
        noise = lik_cfg.get("noise_variance")
        likelihood = GaussianLikelihood(
            y, noise_variance=noise, prior=tuple(lik_cfg.get("prior", (2.0, 0.5)))
        )
    elif kind == "gamma_utility":
        try:
            prices = np.asarray(lik_cfg["prices"], dtype=float)
            chars = np.asarray(lik_cfg["characteristics"], dtype=float)
            portfolio = PortfolioSpec(
                prices,
                chars,
                utility=lik_cfg.get("utility", "excess_return"),
                benchmark=lik_cfg.get("benchmark", "equal"),
            )
            likelihood = GammaUtilityLikelihood(
                portfolio, float(lik_cfg["alpha_e"]), float(lik_cfg["beta_e"])
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"gamma_utility likelihood config: {exc}") from exc
        x = likelihood.training_inputs
    else:
        raise InputError(f"unknown likelihood kind {kind!r}")

    mcfg = McmcConfig(
        iterations=int(config.get("iters", 1000)),
        burnin=int(config.get("burnin", 500)),
        thin=int(config.get("thin", 1)),
        seed=args.seed,
        kernel_family=config.get("kernel_family", "se"),
        alpha=config.get("alpha"),
        beta=config.get("beta"),
        rho=float(config.get("rho", 1.0)),
        allow_add=bool(config.get("allow_add", True)),
    )
    chain = run_sampler(x, likelihood, mcfg, x_test=x_test)

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    n_test = chain.f_star.shape[1]
    d = x.shape[1]
    header_row = ["iteration"]
    header_row += [f"fstar_{i}" for i in range(n_test)]
    header_row += [f"grad_{i}_d{j}" for i in range(n_test) for j in range(d)]
    rows = np.column_stack(
        [
            chain.kept_iterations,
            chain.f_star.reshape(chain.f_star.shape[0], -1),
            chain.grad_f_star.reshape(chain.grad_f_star.shape[0], -1),
        ]
    )
    _write_csv(outdir / "chain.csv", header_row, rows)
    _write_csv(
        outdir / "changepoint_trace.csv",
        ["iteration", "dimension", "position"],
        [(it, dim, pos) for it, dim, arr in chain.cp_records for pos in arr],
    )
    summary = {
        "iterations": chain.iterations,
        "recorded_draws": int(chain.f.shape[0]),
        "changepoint_histograms": [
            {str(k): int(v) for k, v in zip(*np.unique(chain.n_trace[:, s], return_counts=True))}
            for s in range(chain.n_trace.shape[1])
        ],
        "telemetry": chain.telemetry,
    }
    with open(outdir / "summary.json", "w") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
    print(f"chain: {chain.f.shape[0]} recorded draws -> {outdir}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        spec = ExperimentSpec(
            experiment=args.experiment,
            kernel=args.kernel,
            strings=args.strings,
            seed=args.seed,
            grid=args.grid,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    try:
        report = run_experiment(spec)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    predictions = report.pop("_predictions", None)
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "report.json", "w") as handle:
            json.dump(report, handle, indent=2, sort_keys=True)
        if predictions is not None:
            _write_csv(
                outdir / "predictions.csv",
                ["t", "mean", "truth"][: predictions.shape[1]]
                + ["extra"] * max(predictions.shape[1] - 3, 0),
                predictions,
            )
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stringgp", description="String Gaussian process toolkit"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a joint path/derivative sample")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("kernel-table", help="string-kernel approximation errors")
    p.add_argument("--kernel", required=True)
    p.add_argument("--strings", default="2,4,8,16")
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--output")
    p.set_defaults(func=cmd_kernel_table)

    p = sub.add_parser("fit", help="maximum marginal likelihood regression")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior prediction from a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("mcmc", help="reversible-jump MCMC sampler")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--test-data")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mcmc)

    p = sub.add_parser("experiment", help="synthetic benchmark experiments")
    p.add_argument("--experiment", required=True, choices=EXPERIMENT_IDS)
    p.add_argument("--kernel", default="string-periodic")
    p.add_argument("--strings", type=int, default=2)
    p.add_argument("--grid", type=int, default=33)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonFiniteLikelihoodError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump, indent=2, default=str), file=sys.stderr)
        return EXIT_NUMERICAL
    except ConditioningError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
