"""Command-line entry point: solvers and experiment runs over files.

One JSON config per invocation (with a `version` field; unknown keys are
rejected so stale configs fail loudly instead of silently drifting).
Experiments write a CSV plus a metadata sidecar into the output directory;
solves write the full result as JSON. Exit codes: 0 success/converged,
2 solve finished but did not converge, 1 any input problem.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

import umaxent
from umaxent.blackbox import (
    aggregate_predictions,
    estimate_confusion,
    read_predictions,
    solve_umaxent_blackbox,
)
from umaxent.core import (
    FeatureMap,
    ObservationModel,
    Simplex,
    UmaxentError,
    ValidationError,
)
from umaxent.em import EmConfig, solve_umaxent
from umaxent.harness import (
    ExperimentConfig,
    run_blackbox,
    run_negative_obs,
    run_random_models,
    summarize,
    write_results_csv,
    write_run_metadata,
)
from umaxent.latent import LatentStructure, solve_latent_maxent
from umaxent.solver import SolverConfig, solve_maxent

SUBCOMMANDS = ("solve", "random-models", "negative-obs", "blackbox")
SOLVE_MODES = ("maxent", "umaxent", "latent", "blackbox")
CONFIG_VERSION = 1


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _load_config(path: str) -> dict:
    try:
        with open(path) as source:
            payload = json.load(source)
    except OSError as err:
        raise ValidationError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ValidationError(f"config {path} is not valid JSON: {err}") from None
    if not isinstance(payload, dict):
        raise ValidationError("config must be a JSON object")
    if "version" not in payload:
        raise ValidationError("config is missing the 'version' field")
    if payload["version"] != CONFIG_VERSION:
        raise ValidationError(
            f"unsupported config version {payload['version']!r}; "
            f"expected {CONFIG_VERSION}")
    return payload


def _check_keys(payload: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ValidationError(
            f"unknown keys {unknown} in {context}; valid: {sorted(allowed)}")


def _dataclass_from(payload: dict, cls, context: str):
    names = {f.name for f in fields(cls)}
    _check_keys(payload, names, context)
    return cls(**payload)


def _em_config(payload: dict | None) -> EmConfig:
    if payload is None:
        return EmConfig()
    if not isinstance(payload, dict):
        raise ValidationError("'em' must be an object")
    payload = dict(payload)
    solver_payload = payload.pop("solver", None)
    names = {f.name for f in fields(EmConfig)} - {"solver"}
    _check_keys(payload, names, "'em'")
    kwargs = dict(payload)
    if solver_payload is not None:
        if not isinstance(solver_payload, dict):
            raise ValidationError("'em.solver' must be an object")
        kwargs["solver"] = _dataclass_from(solver_payload, SolverConfig,
                                           "'em.solver'")
    return EmConfig(**kwargs)


def _require(payload: dict, key: str, context: str):
    if key not in payload:
        raise ValidationError(f"{context} is missing the '{key}' field")
    return payload[key]


def _simplex(value, name: str) -> Simplex:
    try:
        return Simplex(np.asarray(value, dtype=np.float64))
    except (ValidationError, ValueError, TypeError) as err:
        raise ValidationError(f"'{name}' is not a distribution: {err}") from None


def _features(payload: dict, n: int) -> FeatureMap:
    if "features" not in payload:
        return FeatureMap.indicator(n)
    try:
        feats = FeatureMap(np.asarray(payload["features"], dtype=np.float64))
    except (ValidationError, ValueError, TypeError) as err:
        raise ValidationError(f"'features' is malformed: {err}") from None
    if feats.n_x != n:
        raise ValidationError(
            f"'features' has {feats.n_x} columns for a {n}-element model space")
    return feats


def _report_payload(report) -> dict:
    return {
        "lambda": [float(v) for v in report.weights.values],
        "posterior": [float(v) for v in report.posterior.probs],
        "iterations": report.iterations,
        "stop_reason": report.stop_reason.name.lower(),
        "final_gradient_linf": report.final_gradient_linf,
        "final_learning_rate": report.final_learning_rate,
        "converged": report.converged,
    }


def _write_result(out_dir: str, payload: dict) -> str:
    path = os.path.join(out_dir, "result.json")
    with open(path, "w") as sink:
        json.dump(payload, sink, indent=2, sort_keys=True)
        sink.write("\n")
    return path


def cmd_solve(config_path: str, out_dir: str, seed: int | None) -> int:
    payload = _load_config(config_path)
    mode = _require(payload, "mode", "solve config")
    if mode not in SOLVE_MODES:
        raise ValidationError(
            f"unknown mode {mode!r}; valid modes: {list(SOLVE_MODES)}")
    if seed is None:
        seed = payload.get("seed")

    if mode == "maxent":
        _check_keys(payload, {"version", "mode", "empirical", "features",
                              "prior", "solver"}, "maxent config")
        empirical = _simplex(_require(payload, "empirical", "maxent config"),
                             "empirical")
        feats = _features(payload, empirical.size)
        solver = (_dataclass_from(payload["solver"], SolverConfig, "'solver'")
                  if "solver" in payload else None)
        prior = (_simplex(payload["prior"], "prior")
                 if "prior" in payload else None)
        report = solve_maxent(empirical, feats, solver, prior)
        result = {"mode": mode, **_report_payload(report)}
        converged = report.converged
    elif mode == "umaxent":
        _check_keys(payload, {"version", "mode", "empirical_omega", "channel",
                              "features", "prior", "em", "seed"},
                    "umaxent config")
        empirical = _simplex(
            _require(payload, "empirical_omega", "umaxent config"),
            "empirical_omega")
        channel_raw = _require(payload, "channel", "umaxent config")
        try:
            obs = ObservationModel(np.asarray(channel_raw, dtype=np.float64))
        except (ValidationError, ValueError, TypeError) as err:
            raise ValidationError(f"'channel' is malformed: {err}") from None
        feats = _features(payload, obs.n_x)
        prior = (_simplex(payload["prior"], "prior")
                 if "prior" in payload else None)
        em = _em_config(payload.get("em"))
        outcome = solve_umaxent(empirical, obs, feats, em, prior, seed)
        result = {"mode": mode, **outcome.to_dict()}
        converged = outcome.converged
    elif mode == "latent":
        _check_keys(payload, {"version", "mode", "empirical_y", "structure",
                              "features", "em", "seed"}, "latent config")
        structure_raw = _require(payload, "structure", "latent config")
        if not isinstance(structure_raw, dict):
            raise ValidationError("'structure' must be an object")
        structure = LatentStructure.from_dict(structure_raw)
        empirical = _simplex(
            _require(payload, "empirical_y", "latent config"), "empirical_y")
        feats = _features(payload, structure.n_x)
        em = _em_config(payload.get("em"))
        outcome = solve_latent_maxent(empirical, structure, feats, em,
                                      seed=seed)
        result = {"mode": mode, **outcome.to_dict()}
        converged = outcome.converged
    else:  # blackbox
        _check_keys(payload, {"version", "mode", "labeled", "unlabeled",
                              "features", "em", "seed"}, "blackbox config")
        labeled_path = _require(payload, "labeled", "blackbox config")
        unlabeled_path = _require(payload, "unlabeled", "blackbox config")
        try:
            labeled = read_predictions(labeled_path)
            unlabeled = read_predictions(unlabeled_path)
        except OSError as err:
            raise ValidationError(f"cannot read predictions: {err}") from None
        confusion = estimate_confusion(labeled)
        aggregated = aggregate_predictions(unlabeled)
        feats = _features(payload, confusion.n_x)
        em = _em_config(payload.get("em"))
        outcome = solve_umaxent_blackbox(aggregated, confusion, feats, em,
                                         seed)
        result = {"mode": mode, **outcome.to_dict(),
                  "aggregated": [float(v) for v in aggregated.probs]}
        converged = outcome.converged

    path = _write_result(out_dir, result)
    print(path)
    return 0 if converged else 2


def _experiment_outputs(out_dir: str, command: str, config_echo: dict,
                        results) -> None:
    csv_path = os.path.join(out_dir, "results.csv")
    write_results_csv(results, csv_path)
    meta_path = os.path.join(out_dir, "results.meta.json")
    write_run_metadata(meta_path, {
        "version": CONFIG_VERSION,
        "command": command,
        "config": config_echo,
        "code_version": umaxent.__version__,
    })
    summary = summarize(results)
    print(csv_path)
    print(f"{len(results)} rows, {len(summary)} summary cells",
          file=sys.stderr)


def cmd_random_models(config_path: str, out_dir: str, seed: int | None,
                      jobs: int | None) -> int:
    payload = _load_config(config_path)
    _check_keys(payload, {"version", "x_size", "omega_sizes", "alpha", "beta",
                          "sample_schedule", "repeats", "master_seed",
                          "variants", "em"}, "random-models config")
    kwargs = {k: payload[k] for k in ("x_size", "omega_sizes", "alpha", "beta",
                                      "sample_schedule", "repeats",
                                      "master_seed", "variants")
              if k in payload}
    if "variants" in kwargs:
        kwargs["variants"] = tuple(kwargs["variants"])
    kwargs["em"] = _em_config(payload.get("em"))
    if seed is not None:
        kwargs["master_seed"] = seed
    config = ExperimentConfig(**kwargs)
    results = run_random_models(config, jobs=jobs, progress=_progress)
    _experiment_outputs(out_dir, "random-models", asdict(config), results)
    return 0


def cmd_negative_obs(config_path: str, out_dir: str, seed: int | None,
                     jobs: int | None) -> int:
    payload = _load_config(config_path)
    _check_keys(payload, {"version", "x_sizes", "sample_schedule", "repeats",
                          "master_seed", "alpha", "em"}, "negative-obs config")
    x_sizes = _require(payload, "x_sizes", "negative-obs config")
    master_seed = payload.get("master_seed", 0)
    if seed is not None:
        master_seed = seed
    results = run_negative_obs(
        x_sizes,
        sample_schedule=payload.get("sample_schedule",
                                    umaxent.DEFAULT_SCHEDULE),
        repeats=payload.get("repeats", 20),
        master_seed=master_seed,
        alpha=payload.get("alpha", 3.0),
        em=_em_config(payload.get("em")),
        jobs=jobs, progress=_progress)
    echo = {k: payload.get(k) for k in payload if k != "version"}
    echo["master_seed"] = master_seed
    _experiment_outputs(out_dir, "negative-obs", echo, results)
    return 0


def cmd_blackbox(config_path: str, out_dir: str, seed: int | None,
                 jobs: int | None) -> int:
    payload = _load_config(config_path)
    _check_keys(payload, {"version", "x_size", "omega_size", "alpha", "beta",
                          "temperature", "sample_schedule", "repeats",
                          "master_seed", "labeled_records", "em"},
                "blackbox config")
    x_size = payload.get("x_size", 10)
    omega_size = payload.get("omega_size", max(10, x_size))
    beta = payload.get("beta", 3.0)
    kwargs = {k: payload[k] for k in ("x_size", "alpha", "sample_schedule",
                                      "repeats", "master_seed")
              if k in payload}
    kwargs["em"] = _em_config(payload.get("em"))
    if seed is not None:
        kwargs["master_seed"] = seed
    config = ExperimentConfig(omega_sizes=(omega_size,), beta=beta,
                              variants=("umaxent",), **kwargs)
    results = run_blackbox(
        config, channel_params=(beta, omega_size),
        temperature=payload.get("temperature", 2.0),
        labeled_records=payload.get("labeled_records", 10000),
        jobs=jobs, progress=_progress)
    echo = asdict(config)
    echo["temperature"] = payload.get("temperature", 2.0)
    echo["labeled_records"] = payload.get("labeled_records", 10000)
    _experiment_outputs(out_dir, "blackbox", echo, results)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="umaxent",
        description="Maximum entropy estimation from noisy observations.")
    parser.add_argument("subcommand", nargs="?",
                        help=f"one of {', '.join(SUBCOMMANDS)}")
    parser.add_argument("--config", help="path to the JSON config")
    parser.add_argument("--out", default=".",
                        help="output directory (default: current)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's seed")
    parser.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default: available cores)")
    args = parser.parse_args(argv)

    if args.subcommand is None:
        return _fail(f"missing subcommand; valid: {list(SUBCOMMANDS)}")
    if args.subcommand not in SUBCOMMANDS:
        return _fail(f"unknown subcommand {args.subcommand!r}; "
                     f"valid: {list(SUBCOMMANDS)}")
    if args.config is None:
        return _fail("missing --config PATH")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        return _fail("--seed must fit in 64 bits")
    if args.jobs is not None and args.jobs < 1:
        return _fail("--jobs must be at least 1")
    jobs = args.jobs if args.jobs is not None else os.cpu_count()
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as err:
        return _fail(f"cannot create output directory {args.out}: {err}")

    try:
        if args.subcommand == "solve":
            return cmd_solve(args.config, args.out, args.seed)
        if args.subcommand == "random-models":
            return cmd_random_models(args.config, args.out, args.seed, jobs)
        if args.subcommand == "negative-obs":
            return cmd_negative_obs(args.config, args.out, args.seed, jobs)
        return cmd_blackbox(args.config, args.out, args.seed, jobs)
    except UmaxentError as err:
        return _fail(str(err))
    except TypeError as err:
        # dataclass constructors surface wrong-typed config values here
        return _fail(f"bad config value: {err}")


if __name__ == "__main__":
    sys.exit(main())
