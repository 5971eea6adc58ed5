"""Comparative studies on randomly generated estimation problems.

Each trial builds a ground-truth distribution and an observation channel,
draws one sample stream, and fits every requested estimator at each point of
a growing sample schedule, scoring posteriors by Jensen-Shannon divergence to
the truth. Streams are seeded per (configuration, repeat), so any trial can
be reproduced in isolation and results never depend on execution order.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from umaxent.blackbox import (
    PredictionRecord,
    SyntheticBlackBox,
    estimate_confusion,
    solve_umaxent_blackbox,
)
from umaxent.core import (
    FeatureMap,
    ObservationModel,
    Simplex,
    UmaxentError,
    ValidationError,
    entropy,
    jsd,
)
from umaxent.em import EmConfig, solve_fixed_bar, solve_ml_x, solve_umaxent
from umaxent.solver import StopReason, solve_maxent

VARIANTS = ("true_x", "ml_x", "true_bar", "uniform_bar", "umaxent",
            "umaxent_regularized")
BLACKBOX_VARIANTS = ("umaxent_blackbox", "just_aggregation",
                     "umaxent_known_channel")

CSV_HEADER = ("variant", "omega_size", "alpha", "beta", "n_samples", "repeat",
              "jsd", "entropy", "converged", "iterations", "seed")

DEFAULT_OMEGA_SIZES = (10, 20, 50, 100, 150, 200, 300)
DEFAULT_SCHEDULE = tuple(2 ** k for k in range(19))

CHANNEL_RETRY_BUDGET = 1000


class GenerationError(UmaxentError):
    """Random instance generation exhausted its retry budget."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Shape of one comparative study over random instances."""

    x_size: int = 10
    omega_sizes: tuple[int, ...] = DEFAULT_OMEGA_SIZES
    alpha: float = 3.0
    beta: float = 3.0
    sample_schedule: tuple[int, ...] = DEFAULT_SCHEDULE
    repeats: int = 100
    master_seed: int = 0
    variants: tuple[str, ...] = VARIANTS
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        object.__setattr__(self, "omega_sizes",
                           tuple(int(m) for m in self.omega_sizes))
        object.__setattr__(self, "sample_schedule",
                           tuple(int(n) for n in self.sample_schedule))
        object.__setattr__(self, "variants", tuple(self.variants))
        if self.x_size < 2:
            raise ValidationError("x_size must be at least 2")
        if not self.omega_sizes:
            raise ValidationError("omega_sizes must not be empty")
        if any(m < self.x_size for m in self.omega_sizes):
            raise ValidationError("every omega_size must be at least x_size")
        if not self.sample_schedule:
            raise ValidationError("sample_schedule must not be empty")
        if self.sample_schedule[0] < 1:
            raise ValidationError("sample sizes must be positive")
        if any(b <= a for a, b in zip(self.sample_schedule,
                                      self.sample_schedule[1:])):
            raise ValidationError("sample_schedule must be strictly increasing")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValidationError("alpha and beta must be non-negative")
        if self.repeats < 1:
            raise ValidationError("repeats must be at least 1")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValidationError("master_seed must fit in 64 bits")
        if not self.variants:
            raise ValidationError("variants must not be empty")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ValidationError(
                f"unknown variants {unknown}; valid: {list(VARIANTS)}")
        if len(set(self.variants)) != len(self.variants):
            raise ValidationError("variants must not repeat")
        if not isinstance(self.em, EmConfig):
            raise ValidationError("em must be an EmConfig")


@dataclass(frozen=True)
class TrialResult:
    """One estimator's score at one sample size of one trial."""

    variant: str
    omega_size: int
    alpha: float
    beta: float
    n_samples: int
    repeat_index: int
    jsd_to_truth: float
    posterior_entropy: float
    converged: bool
    iterations: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "variant", str(self.variant))
        object.__setattr__(self, "omega_size", int(self.omega_size))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "repeat_index", int(self.repeat_index))
        object.__setattr__(self, "jsd_to_truth", float(self.jsd_to_truth))
        object.__setattr__(self, "posterior_entropy",
                           float(self.posterior_entropy))
        object.__setattr__(self, "converged", bool(self.converged))
        object.__setattr__(self, "iterations", int(self.iterations))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class SummaryRow:
    variant: str
    omega_size: int
    alpha: float
    beta: float
    n_samples: int
    mean_jsd: float
    std_jsd: float
    count: int


def gen_true_distribution(alpha: float, n: int, rng: np.random.Generator) -> Simplex:
    """Random truth with spread alpha: probabilities proportional to
    e^(alpha u), u ~ U(-1, 1) per element. alpha 0 is exactly uniform."""
    if alpha < 0.0:
        raise ValidationError("alpha must be non-negative")
    if n < 1:
        raise ValidationError("need at least one model element")
    if alpha == 0.0:
        rng.uniform(-1.0, 1.0, size=n)  # keep the stream position consistent
        return Simplex(np.full(n, 1.0 / n))
    raw = np.exp(alpha * rng.uniform(-1.0, 1.0, size=n))
    return Simplex(raw / raw.sum())


def gen_observation_model(beta: float, x_size: int, omega_size: int,
                          rng: np.random.Generator) -> ObservationModel:
    """Random channel with noise level beta, kept usable for decoding.

    Rows start proportional to e^(beta u), u ~ U(0, 1); each X then gets a
    distinct boosted observation (+1/|omega| before renormalizing) so that
    maximum-likelihood decoding has a chance. Candidates are regenerated
    until every X is the argmax of Pr(X|omega) for at least one omega.
    """
    if beta < 0.0:
        raise ValidationError("beta must be non-negative")
    if omega_size < x_size:
        raise ValidationError("omega_size must be at least x_size")
    for _ in range(CHANNEL_RETRY_BUDGET):
        raw = np.exp(beta * rng.uniform(0.0, 1.0, size=(x_size, omega_size)))
        raw /= raw.sum(axis=1, keepdims=True)
        boosted = rng.permutation(omega_size)[:x_size]
        raw[np.arange(x_size), boosted] += 1.0 / omega_size
        raw /= raw.sum(axis=1, keepdims=True)
        decoded = set(np.argmax(raw, axis=0))
        if decoded.issuperset(range(x_size)):
            return ObservationModel(raw)
    raise GenerationError(
        f"no usable channel in {CHANNEL_RETRY_BUDGET} attempts "
        f"(beta={beta}, x_size={x_size}, omega_size={omega_size})")


def gen_negative_observation_model(n: int) -> ObservationModel:
    """Channel that never shows the true element: uniform over the others."""
    if n < 2:
        raise ValidationError("need at least two model elements")
    channel = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(channel, 0.0)
    return ObservationModel(channel)


@dataclass(frozen=True)
class DrawnDataset:
    """One sample stream: element draws, their observations, and counts."""

    x_samples: np.ndarray
    omega_samples: np.ndarray
    empirical_x: Simplex
    empirical_omega: Simplex

    def prefix(self, k: int, n_x: int, n_omega: int) -> tuple[Simplex, Simplex]:
        """Empirical distributions over the first k samples."""
        ex = np.bincount(self.x_samples[:k], minlength=n_x) / k
        ew = np.bincount(self.omega_samples[:k], minlength=n_omega) / k
        return Simplex(ex), Simplex(ew)


def draw_dataset(truth: Simplex, obs: ObservationModel, n: int,
                 rng: np.random.Generator) -> DrawnDataset:
    """Draw n (X, omega) pairs, one pair of uniforms per sample.

    Because sample j consumes exactly uniforms 2j and 2j+1, the dataset drawn
    at n' < n from the same generator state is exactly the first n' entries.
    """
    if n < 1:
        raise ValidationError("need at least one sample")
    if truth.size != obs.n_x:
        raise ValidationError("truth does not match the channel rows")
    u = rng.random((n, 2))
    cum_truth = np.cumsum(truth.probs)
    xs = np.minimum(np.searchsorted(cum_truth, u[:, 0], side="right"),
                    truth.size - 1)
    omegas = np.empty(n, dtype=np.int64)
    cum_rows = np.cumsum(obs.channel, axis=1)
    for x in np.unique(xs):
        mask = xs == x
        omegas[mask] = np.searchsorted(cum_rows[x], u[mask, 1], side="right")
    omegas = np.minimum(omegas, obs.n_omega - 1)
    empirical_x = Simplex(np.bincount(xs, minlength=truth.size) / n)
    empirical_omega = Simplex(np.bincount(omegas, minlength=obs.n_omega) / n)
    return DrawnDataset(xs, omegas, empirical_x, empirical_omega)


def _trial_seeds(master_seed: int, config_index: int,
                 repeat: int) -> tuple[np.random.SeedSequence, int, int, int]:
    """Derive the per-trial stream and the solver seeds it owns."""
    trial_ss = np.random.SeedSequence(master_seed,
                                      spawn_key=(config_index, repeat))
    data_child, first_child, second_child = trial_ss.spawn(3)
    seed_id = int(trial_ss.generate_state(1, np.uint64)[0])
    first = int(first_child.generate_state(1, np.uint64)[0])
    second = int(second_child.generate_state(1, np.uint64)[0])
    return data_child, seed_id, first, second


def _failure(variant: str, omega_size: int, alpha: float, beta: float,
             n: int, repeat: int, seed_id: int) -> TrialResult:
    return TrialResult(variant, omega_size, alpha, beta, n, repeat,
                       float("nan"), float("nan"), False, 0, seed_id)


def _report_row(variant, report, truth, omega_size, alpha, beta, n, repeat,
                seed_id) -> TrialResult:
    return TrialResult(
        variant, omega_size, alpha, beta, n, repeat,
        jsd(report.posterior, truth), entropy(report.posterior),
        report.stop_reason is StopReason.CONVERGED, report.iterations, seed_id)


def _result_row(variant, result, truth, omega_size, alpha, beta, n, repeat,
                seed_id) -> TrialResult:
    return TrialResult(
        variant, omega_size, alpha, beta, n, repeat,
        jsd(result.posterior, truth), result.entropy,
        result.converged, result.em_iterations, seed_id)


def _random_models_trial(config: ExperimentConfig,
                         unit: tuple[int, int, int]) -> list[TrialResult]:
    config_index, omega_size, repeat = unit
    data_child, seed_id, u_seed, r_seed = _trial_seeds(
        config.master_seed, config_index, repeat)
    rng = np.random.default_rng(data_child)
    truth = gen_true_distribution(config.alpha, config.x_size, rng)
    obs = gen_observation_model(config.beta, config.x_size, omega_size, rng)
    dataset = draw_dataset(truth, obs, config.sample_schedule[-1], rng)
    features = FeatureMap.indicator(config.x_size)
    uniform = Simplex(np.full(config.x_size, 1.0 / config.x_size))
    alpha, beta = config.alpha, config.beta
    rows: list[TrialResult] = []
    for n in config.sample_schedule:
        ex, ew = dataset.prefix(n, config.x_size, omega_size)
        for variant in config.variants:
            try:
                if variant == "true_x":
                    report = solve_maxent(ex, features, config.em.solver)
                    rows.append(_report_row(variant, report, truth, omega_size,
                                            alpha, beta, n, repeat, seed_id))
                elif variant == "ml_x":
                    report = solve_ml_x(ew, obs, features, config.em.solver)
                    rows.append(_report_row(variant, report, truth, omega_size,
                                            alpha, beta, n, repeat, seed_id))
                elif variant == "true_bar":
                    report = solve_fixed_bar(truth, ew, obs, features,
                                             config.em.solver)
                    rows.append(_report_row(variant, report, truth, omega_size,
                                            alpha, beta, n, repeat, seed_id))
                elif variant == "uniform_bar":
                    report = solve_fixed_bar(uniform, ew, obs, features,
                                             config.em.solver)
                    rows.append(_report_row(variant, report, truth, omega_size,
                                            alpha, beta, n, repeat, seed_id))
                elif variant == "umaxent":
                    result = solve_umaxent(ew, obs, features, config.em,
                                           seed=u_seed)
                    rows.append(_result_row(variant, result, truth, omega_size,
                                            alpha, beta, n, repeat, seed_id))
                else:  # umaxent_regularized
                    em = replace(config.em,
                                 solver=replace(config.em.solver,
                                                regularization_n=float(n)))
                    result = solve_umaxent(ew, obs, features, em, seed=r_seed)
                    rows.append(_result_row(variant, result, truth, omega_size,
                                            alpha, beta, n, repeat, seed_id))
            except UmaxentError:
                rows.append(_failure(variant, omega_size, alpha, beta, n,
                                     repeat, seed_id))
    return rows


def _row_order(row: TrialResult):
    beta = row.beta if row.beta == row.beta else float("-inf")  # NaN last resort
    return (row.variant, row.omega_size, row.alpha, beta, row.n_samples,
            row.repeat_index)


def _run_units(worker: Callable, units: Sequence, jobs: int | None,
               progress: Callable[[str], None] | None = None) -> list[TrialResult]:
    rows: list[TrialResult] = []
    if jobs is not None and jobs == 1:
        for unit in units:
            rows.extend(worker(unit))
            if progress is not None:
                progress(f"finished unit {unit}")
        return sorted(rows, key=_row_order)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for unit, unit_rows in zip(units, pool.map(worker, units)):
            rows.extend(unit_rows)
            if progress is not None:
                progress(f"finished unit {unit}")
    return sorted(rows, key=_row_order)


class _Worker:
    """Top-level picklable wrapper binding a trial function to its config."""

    def __init__(self, fn: Callable, *bound):
        self.fn = fn
        self.bound = bound

    def __call__(self, unit):
        return self.fn(*self.bound, unit)


def run_random_models(config: ExperimentConfig, jobs: int | None = 1,
                      progress: Callable[[str], None] | None = None
                      ) -> list[TrialResult]:
    """Score every configured estimator across omega sizes and repeats."""
    units = [(ci, m, rep)
             for ci, m in enumerate(config.omega_sizes)
             for rep in range(config.repeats)]
    return _run_units(_Worker(_random_models_trial, config), units, jobs,
                      progress)


def _negative_obs_trial(em: EmConfig, master_seed: int, alpha: float,
                        schedule: tuple[int, ...],
                        unit: tuple[int, int, int]) -> list[TrialResult]:
    config_index, x_size, repeat = unit
    data_child, seed_id, u_seed, _ = _trial_seeds(master_seed, config_index,
                                                  repeat)
    rng = np.random.default_rng(data_child)
    truth = gen_true_distribution(alpha, x_size, rng)
    obs = gen_negative_observation_model(x_size)
    dataset = draw_dataset(truth, obs, schedule[-1], rng)
    features = FeatureMap.indicator(x_size)
    beta = float("nan")  # channel is fixed, not sampled with a noise level
    rows: list[TrialResult] = []
    for n in schedule:
        _, ew = dataset.prefix(n, x_size, x_size)
        try:
            result = solve_umaxent(ew, obs, features, em, seed=u_seed)
            rows.append(_result_row("umaxent", result, truth, x_size, alpha,
                                    beta, n, repeat, seed_id))
        except UmaxentError:
            rows.append(_failure("umaxent", x_size, alpha, beta, n, repeat,
                                 seed_id))
        try:
            report = solve_ml_x(ew, obs, features, em.solver)
            rows.append(_report_row("ml_x", report, truth, x_size, alpha,
                                    beta, n, repeat, seed_id))
        except UmaxentError:
            rows.append(_failure("ml_x", x_size, alpha, beta, n, repeat,
                                 seed_id))
    return rows


def run_negative_obs(x_sizes: Sequence[int],
                     sample_schedule: Sequence[int] = DEFAULT_SCHEDULE,
                     repeats: int = 20, master_seed: int = 0,
                     alpha: float = 3.0, em: EmConfig | None = None,
                     jobs: int | None = 1,
                     progress: Callable[[str], None] | None = None
                     ) -> list[TrialResult]:
    """Study channels whose diagonal is zero: observations exclude the truth.

    Maximum-likelihood decoding is structurally wrong here no matter how much
    data arrives; the noisy-observation solve is not.
    """
    x_sizes = tuple(int(n) for n in x_sizes)
    schedule = tuple(int(n) for n in sample_schedule)
    if not x_sizes:
        raise ValidationError("x_sizes must not be empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 1:
        raise ValidationError("sample_schedule must be positive and strictly increasing")
    if repeats < 1:
        raise ValidationError("repeats must be at least 1")
    em = em if em is not None else EmConfig()
    units = [(ci, n, rep)
             for ci, n in enumerate(x_sizes)
             for rep in range(repeats)]
    return _run_units(_Worker(_negative_obs_trial, em, master_seed, alpha,
                              schedule), units, jobs, progress)


def _blackbox_trial(config: ExperimentConfig, beta: float, omega_size: int,
                    temperature: float, labeled_records: int,
                    unit: tuple[int, int, int]) -> list[TrialResult]:
    config_index, _, repeat = unit
    data_child, seed_id, u_seed, k_seed = _trial_seeds(
        config.master_seed, config_index, repeat)
    rng = np.random.default_rng(data_child)
    n_x = config.x_size
    truth = gen_true_distribution(config.alpha, n_x, rng)
    channel = gen_observation_model(beta, n_x, omega_size, rng)
    box = SyntheticBlackBox(channel, temperature)
    uniform = Simplex(np.full(n_x, 1.0 / n_x))

    # Labeled split for the confusion estimate, then one unlabeled stream
    # shared by all variants so they see the same data at every prefix.
    labeled_ds = draw_dataset(uniform, channel, labeled_records, rng)
    labeled = [PredictionRecord(prediction=box.predict(int(w)), true_x=int(x))
               for x, w in zip(labeled_ds.x_samples, labeled_ds.omega_samples)]
    confusion = estimate_confusion(labeled)
    dataset = draw_dataset(truth, channel, config.sample_schedule[-1], rng)
    table = np.stack([box.predict(j).probs for j in range(channel.n_omega)],
                     axis=1)

    features = FeatureMap.indicator(n_x)
    rows: list[TrialResult] = []
    for n in config.sample_schedule:
        counts = np.bincount(dataset.omega_samples[:n],
                             minlength=channel.n_omega)
        agg = Simplex(table @ (counts / n))
        _, ew = dataset.prefix(n, n_x, channel.n_omega)
        try:
            result = solve_umaxent_blackbox(agg, confusion, features,
                                            config.em, seed=u_seed)
            rows.append(_result_row("umaxent_blackbox", result, truth,
                                    omega_size, config.alpha, beta, n, repeat,
                                    seed_id))
        except UmaxentError:
            rows.append(_failure("umaxent_blackbox", omega_size, config.alpha,
                                 beta, n, repeat, seed_id))
        rows.append(TrialResult("just_aggregation", omega_size, config.alpha,
                                beta, n, repeat, jsd(agg, truth), entropy(agg),
                                True, 0, seed_id))
        try:
            result = solve_umaxent(ew, channel, features, config.em,
                                   seed=k_seed)
            rows.append(_result_row("umaxent_known_channel", result, truth,
                                    omega_size, config.alpha, beta, n, repeat,
                                    seed_id))
        except UmaxentError:
            rows.append(_failure("umaxent_known_channel", omega_size,
                                 config.alpha, beta, n, repeat, seed_id))
    return rows


def run_blackbox(config: ExperimentConfig,
                 channel_params: tuple[float, int] | None = None,
                 temperature: float = 2.0, labeled_records: int = 10000,
                 jobs: int | None = 1,
                 progress: Callable[[str], None] | None = None
                 ) -> list[TrialResult]:
    """Compare deconvolved predictor output against raw aggregation.

    channel_params is (beta, omega_size) for the underlying true channel;
    by default the config's beta and its first omega size. The labeled split
    (uniform over X, labeled_records samples) estimates the predictor's
    confusion; the unlabeled stream follows the sampled truth.
    """
    if channel_params is None:
        channel_params = (config.beta, config.omega_sizes[0])
    beta, omega_size = float(channel_params[0]), int(channel_params[1])
    if omega_size < config.x_size:
        raise ValidationError("omega_size must be at least x_size")
    if labeled_records < 1:
        raise ValidationError("labeled_records must be positive")
    if not temperature > 0.0:
        raise ValidationError("temperature must be positive")
    units = [(0, omega_size, rep) for rep in range(config.repeats)]
    return _run_units(_Worker(_blackbox_trial, config, beta, omega_size,
                              temperature, labeled_records), units, jobs,
                      progress)


def summarize(results: Iterable[TrialResult]) -> list[SummaryRow]:
    """Mean and population standard deviation of JSD per estimator and cell.

    Cells group (variant, omega_size, alpha, beta, n_samples); the spread is
    the population standard deviation (divisor len, not len - 1). Rows come
    back in a fixed sorted order and each keeps its trial count.
    """
    groups: dict[tuple, list[float]] = {}
    for row in results:
        key = (row.variant, row.omega_size, row.alpha, row.beta, row.n_samples)
        groups.setdefault(key, []).append(row.jsd_to_truth)
    out = []
    for key in sorted(groups,
                      key=lambda k: (k[0], k[1], k[2],
                                     k[3] if k[3] == k[3] else float("-inf"),
                                     k[4])):
        values = np.asarray(groups[key])
        out.append(SummaryRow(key[0], key[1], key[2], key[3], key[4],
                              float(values.mean()),
                              float(values.std(ddof=0)), len(values)))
    return out


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_to_csv_text(results: Iterable[TrialResult]) -> str:
    """Render rows (re-sorted) to CSV text with the fixed column set."""
    rows = sorted(results, key=_row_order)
    sink = io.StringIO()
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([
            _format_cell(v) for v in (
                row.variant, row.omega_size, row.alpha, row.beta,
                row.n_samples, row.repeat_index, row.jsd_to_truth,
                row.posterior_entropy, row.converged, row.iterations,
                row.seed)
        ])
    return sink.getvalue()


def write_results_csv(results: Iterable[TrialResult], path) -> None:
    with open(path, "w") as sink:
        sink.write(results_to_csv_text(results))


def write_run_metadata(path, payload: dict) -> None:
    """Sidecar with the config echo, code version, and seeds of a run."""
    with open(path, "w") as sink:
        json.dump(payload, sink, indent=2, sort_keys=True)
        sink.write("\n")
