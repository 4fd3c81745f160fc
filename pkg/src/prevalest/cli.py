"""Command-line front end: ``prevalest estimate | sweep | simulate | rank-check``.

Parameter precedence: flags, then ``--config`` file, then ``PREVALEST_SEED``
(seed only), then built-in defaults. The resolved configuration is echoed as
``# key=value`` comment lines at the top of every output.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from prevalest.binormal import BinormalSpec, monte_carlo_clt, sweep_variances, SEMI_ASYMPTOTIC
from prevalest.errors import InvalidInputError, PrevalestError
from prevalest.io import RunConfig, ingest_csv, parse_config_file, write_report
from prevalest.moments import (
    FORMS,
    StatisticProfile,
    build_conditional_mean_system,
    build_covariance_system,
    rank_diagnostic,
)
from prevalest.quantifiers import (
    METHODS,
    em_ml_estimate,
    fit_logistic_posterior,
    fit_one_vs_all_classifiers,
    run_method,
)

log = logging.getLogger("prevalest")

EXIT_OK, EXIT_BAD_INPUT, EXIT_SINGULAR, EXIT_NOT_CONVERGED = 0, 2, 3, 4

BINORMAL_PARAMS = {"mu1": (float, 1.5), "mu2": (float, 0.0), "sigma": (float, 1.0), "p1": (float, 0.15)}

PARAMS = {
    "estimate": {
        "method": (str, None),
        "train": (str, None),
        "test": (str, None),
        "seed": (int, 0),
        "output": (str, None),
        "em_tol": (float, 1e-8),
        "em_max_iter": (int, 10_000),
    },
    "sweep": {
        **BINORMAL_PARAMS,
        "q1": (float, None),
        "grid": (str, "0.01:0.99:0.01"),
        "output": (str, None),
    },
    "simulate": {
        **BINORMAL_PARAMS,
        "method": (str, "friedman"),
        "q1": (float, 0.3),
        "n": (int, 10_000),
        "reps": (int, 1000),
        "seed": (int, 0),
        "output": (str, None),
    },
    "rank-check": {
        "train": (str, None),
        "test": (str, None),
        "form": (str, "conditional-mean"),
        "statistics": (str, "posteriors"),
        "tolerance": (float, 1e-10),
        "seed": (int, 0),
        "output": (str, None),
    },
}

# keys that do not change the content of the output and are not echoed
NOT_ECHOED = {"output"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prevalest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command, params in PARAMS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="plain-text key=value file")
        for key, (typ, default) in params.items():
            flag = "--" + key.replace("_", "-")
            extra = {}
            if key == "method" and command == "estimate":
                extra["help"] = f"one of {', '.join(METHODS)} or 'all'"
            elif key == "method":
                extra["choices"] = sorted(SEMI_ASYMPTOTIC)
            p.add_argument(flag, dest=key, type=typ, default=argparse.SUPPRESS, **extra)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    params = PARAMS[args.command]
    values = {key: default for key, (_, default) in params.items()}
    if "seed" in params and os.environ.get("PREVALEST_SEED"):
        try:
            values["seed"] = int(os.environ["PREVALEST_SEED"])
        except ValueError:
            raise InvalidInputError("PREVALEST_SEED must be an integer") from None
    if getattr(args, "config", None):
        for key, text in parse_config_file(args.config).items():
            if key not in params:
                raise InvalidInputError(f"unknown config key {key!r} for {args.command}")
            typ = params[key][0]
            try:
                values[key] = typ(text) if text != "" else None
            except ValueError:
                raise InvalidInputError(f"config key {key!r}: cannot parse {text!r}") from None
    for key in params:
        if key in vars(args):
            values[key] = getattr(args, key)
    return RunConfig(args.command, values)


@contextmanager
def _output(path):
    if path:
        with Path(path).open("w", newline="") as fh:
            yield fh
    else:
        yield sys.stdout


def _echo(config: RunConfig) -> RunConfig:
    return RunConfig(config.command, {k: v for k, v in config.values.items() if k not in NOT_ECHOED})


def _require(config, *keys):
    missing = [k for k in keys if config.get(k) in (None, "")]
    if missing:
        raise InvalidInputError(f"missing required parameter(s): {', '.join('--' + k for k in missing)}")


def _spec(config) -> BinormalSpec:
    return BinormalSpec(config["mu1"], config["mu2"], config["sigma"], config["p1"])


def cmd_estimate(config: RunConfig) -> int:
    _require(config, "method", "train", "test")
    method = config["method"]
    if method != "all" and method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; choose from {', '.join(METHODS)} or 'all'")
    train = ingest_csv(config["train"], "train")
    test = ingest_csv(config["test"], "test")
    methods = list(METHODS) if method == "all" else [method]
    if method == "all" and train.class_count > 2:
        methods.remove("debias")
    posterior = None
    if any(m not in ("ac", "friedman-cs") for m in methods):
        posterior = fit_logistic_posterior(train)
    rows, status = [], EXIT_OK
    for m in methods:
        try:
            if m == "em":
                rep = em_ml_estimate(posterior, test, max_iter=config["em_max_iter"], tol=config["em_tol"])
            else:
                rep = run_method(m, train, test, posterior)
        except PrevalestError as exc:
            print(f"prevalest: {m}: {exc}", file=sys.stderr)
            status = status or exc.exit_code
            continue
        d = rep.diagnostics
        if d.converged is False:
            print(f"prevalest: {m}: did not converge in {d.iterations} iterations", file=sys.stderr)
            status = status or EXIT_NOT_CONVERGED
        rows.append([m, *rep.q, d.clipped, d.condition_number, d.iterations])
    header = ["method", *[f"q_{c}" for c in range(1, train.class_count + 1)], "clipped", "condition_number", "iterations"]
    if rows:
        with _output(config.get("output")) as out:
            write_report(rows, header, _echo(config), out)
    return status


def parse_grid(text: str) -> np.ndarray:
    text = text.strip()
    if ":" in text:
        parts = [float(t) for t in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise InvalidInputError(f"grid must be start:stop:step, got {text!r}")
        start, stop, step = parts
        count = int(round((stop - start) / step)) + 1
        return np.round(start + step * np.arange(count), 12)
    return np.array([float(t) for t in text.split(",") if t.strip()])


def cmd_sweep(config: RunConfig) -> int:
    spec = _spec(config)
    try:
        grid = np.array([config["q1"]]) if config.get("q1") is not None else parse_grid(config["grid"])
    except ValueError:
        raise InvalidInputError(f"cannot parse grid {config['grid']!r}") from None
    curve = sweep_variances(spec, grid)
    with _output(config.get("output")) as out:
        write_report(curve.rows(), ["q1", "var_ml", "var_fried", "var_debias"], _echo(config), out)
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    if config["reps"] < 1 or config["n"] < 1:
        raise InvalidInputError("n and reps must be positive")
    res = monte_carlo_clt(_spec(config), config["q1"], config["n"], config["reps"], config["method"],
                          config["seed"], enforce_minimums=False)
    header = ["method", "q1", "n", "reps", "mean_estimate", "n_times_var", "analytic_sigma2", "ratio"]
    row = [res.method, res.q1, res.n, res.reps, res.empirical_mean, res.empirical_variance_times_n,
           res.analytic_sigma2, res.ratio]
    with _output(config.get("output")) as out:
        write_report([row], header, _echo(config), out)
    return EXIT_OK


def cmd_rank_check(config: RunConfig) -> int:
    _require(config, "train", "test")
    if config["form"] not in FORMS:
        raise InvalidInputError(f"form must be one of {', '.join(FORMS)}")
    train = ingest_csv(config["train"], "train")
    test = ingest_csv(config["test"], "test")
    posterior = fit_logistic_posterior(train)
    if config["statistics"] == "posteriors":
        stats = StatisticProfile.from_posterior(posterior)
    elif config["statistics"] == "indicators":
        stats = StatisticProfile.from_classifier(fit_one_vs_all_classifiers(train))
    else:
        raise InvalidInputError("statistics must be 'posteriors' or 'indicators'")
    form = config["form"]
    if form == "conditional-mean":
        system = build_conditional_mean_system(stats, train, test)
    else:
        target = "indicators" if form == "indicator-covariance" else "posteriors"
        system = build_covariance_system(stats, train, test, target, posterior if target == "posteriors" else None)
    rep = rank_diagnostic(system, config["tolerance"])
    header = ["form", "statistics", "rows", "classes", "numerical_rank", "kernel_witness_residual",
              "condition_number", "singular_values"]
    row = [form, config["statistics"], system.shape[0], system.shape[1], rep.numerical_rank,
           rep.kernel_witness_residual, rep.condition_number,
           ";".join(format(float(v), ".17g") for v in rep.singular_values)]
    with _output(config.get("output")) as out:
        write_report([row], header, _echo(config), out)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "sweep": cmd_sweep, "simulate": cmd_simulate, "rank-check": cmd_rank_check}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="prevalest: %(levelname)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except PrevalestError as exc:
        print(f"prevalest: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
