"""Feeding opaque per-sample predictors into the noisy-observation solver.

A predictor (a trained classifier, say) emits a distribution over candidate
model elements for every sample it sees. Treating the candidate space as the
observation space turns the predictor into an observation channel: its
confusion matrix, estimated from a labeled split, plays Pr(omega|X), and the
aggregated unlabeled predictions play the empirical observation distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from umaxent.core import (
    FeatureMap,
    ObservationModel,
    Simplex,
    ValidationError,
)
from umaxent.em import EmConfig, UMaxEntResult, solve_umaxent


@dataclass(frozen=True)
class PredictionRecord:
    """One predictor output: a distribution over candidates, optionally labeled."""

    prediction: Simplex
    true_x: int | None = None

    def __post_init__(self):
        if not isinstance(self.prediction, Simplex):
            object.__setattr__(self, "prediction", Simplex(self.prediction))
        if self.true_x is not None:
            true_x = int(self.true_x)
            if true_x < 0:
                raise ValidationError("true_x must be a model-space index")
            object.__setattr__(self, "true_x", true_x)

    def to_dict(self) -> dict:
        payload: dict = {"prediction": self.prediction.probs.tolist()}
        if self.true_x is not None:
            payload["true_x"] = self.true_x
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "PredictionRecord":
        if "prediction" not in payload:
            raise ValidationError("prediction record is missing 'prediction'")
        return cls(prediction=Simplex(np.asarray(payload["prediction"], dtype=np.float64)),
                   true_x=payload.get("true_x"))


@dataclass(frozen=True)
class ConfusionModel:
    """Average predictor output per true model element.

    Row X holds the mean prediction over labeled records with that truth,
    renormalized; `counts[X]` says how many records built it. Rows with no
    labeled records are NaN and reported by `unestimated`.
    """

    channel: np.ndarray
    counts: np.ndarray
    unestimated: np.ndarray = field(init=False)

    def __post_init__(self):
        channel = np.asarray(self.channel, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if channel.ndim != 2 or channel.shape[0] != channel.shape[1]:
            raise ValidationError("confusion channel must be square")
        if counts.shape != (channel.shape[0],):
            raise ValidationError("confusion counts must align with channel rows")
        if np.any(counts < 0):
            raise ValidationError("confusion counts must be non-negative")
        channel = channel.copy()
        for i in range(channel.shape[0]):
            if counts[i] == 0:
                channel[i] = np.nan
                continue
            row = channel[i]
            if np.any(~np.isfinite(row)) or np.any(row < 0.0):
                raise ValidationError(f"confusion row {i} is not a distribution")
            total = row.sum()
            if total <= 0.0:
                raise ValidationError(f"confusion row {i} has no mass")
            channel[i] = row / total
        channel.setflags(write=False)
        counts.setflags(write=False)
        unestimated = counts == 0
        unestimated.setflags(write=False)
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "unestimated", unestimated)

    @property
    def n_x(self) -> int:
        return self.channel.shape[0]

    def to_observation_model(self) -> ObservationModel:
        if np.any(self.unestimated):
            missing = ", ".join(str(i) for i in np.flatnonzero(self.unestimated))
            raise ValidationError(
                f"confusion rows unestimated for model elements: {missing}")
        return ObservationModel(self.channel)

    def to_dict(self) -> dict:
        return {"confusion": self.channel.tolist(), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "ConfusionModel":
        try:
            return cls(np.asarray(payload["confusion"], dtype=np.float64),
                       np.asarray(payload["counts"], dtype=np.int64))
        except KeyError as missing:
            raise ValidationError(f"confusion model is missing {missing}") from None


def estimate_confusion(labeled: Sequence[PredictionRecord]) -> ConfusionModel:
    """Build a confusion model by averaging predictions per true element."""
    records = list(labeled)
    if not records:
        raise ValidationError("confusion estimation needs labeled records")
    n = records[0].prediction.size
    sums = np.zeros((n, n))
    counts = np.zeros(n, dtype=np.int64)
    for pos, record in enumerate(records):
        if record.true_x is None:
            raise ValidationError(f"record {pos} has no true_x label")
        if record.prediction.size != n:
            raise ValidationError(
                f"record {pos} predicts over {record.prediction.size} candidates, "
                f"expected {n}")
        if record.true_x >= n:
            raise ValidationError(
                f"record {pos} labels true_x={record.true_x} outside the "
                f"{n}-element model space")
        sums[record.true_x] += record.prediction.probs
        counts[record.true_x] += 1
    channel = np.full((n, n), np.nan)
    estimated = counts > 0
    channel[estimated] = sums[estimated] / counts[estimated, None]
    return ConfusionModel(channel, counts)


def aggregate_predictions(unlabeled: Sequence[PredictionRecord]) -> Simplex:
    """Component-wise mean of the predictions; labels, if any, are ignored."""
    records = list(unlabeled)
    if not records:
        raise ValidationError("aggregation needs at least one prediction")
    n = records[0].prediction.size
    total = np.zeros(n)
    for pos, record in enumerate(records):
        if record.prediction.size != n:
            raise ValidationError(
                f"record {pos} predicts over {record.prediction.size} candidates, "
                f"expected {n}")
        total += record.prediction.probs
    return Simplex(total / len(records))


def solve_umaxent_blackbox(ptilde_xhat: Simplex, confusion: ConfusionModel,
                           features: FeatureMap, em: EmConfig | None = None,
                           seed=None) -> UMaxEntResult:
    """Deconvolve aggregated predictions through the confusion channel.

    The candidate space doubles as the observation space, so this is the
    standard noisy-observation solve with the confusion matrix as channel.
    """
    obs = confusion.to_observation_model()
    if ptilde_xhat.size != confusion.n_x:
        raise ValidationError(
            "aggregated predictions do not match the confusion model")
    return solve_umaxent(ptilde_xhat, obs, features, em, seed=seed)


class SyntheticBlackBox:
    """Deterministic stand-in predictor derived from a known channel.

    For a sample that produced observation omega, the prediction over
    candidates is proportional to Pr(omega|X)^(1/temperature): a function of
    (omega, temperature) only. Temperature 1 is the Bayes rule under a uniform
    prior; higher temperatures flatten the prediction toward uniform over the
    candidates that could have produced omega.
    """

    def __init__(self, truth_channel: ObservationModel, temperature: float,
                 seed=None):
        if not temperature > 0.0:
            raise ValidationError("temperature must be positive")
        self.channel = truth_channel
        self.temperature = float(temperature)
        self._rng = np.random.default_rng(seed)
        powered = truth_channel.channel ** (1.0 / self.temperature)
        sums = powered.sum(axis=0)
        table = np.full_like(powered, np.nan)
        reachable = sums > 0.0
        table[:, reachable] = powered[:, reachable] / sums[reachable]
        self._table = table
        self._prediction_for = [
            Simplex(table[:, j]) if reachable[j] else None
            for j in range(truth_channel.n_omega)
        ]

    def predict(self, omega_index: int) -> Simplex:
        prediction = self._prediction_for[omega_index]
        if prediction is None:
            raise ValidationError(
                f"observation {omega_index} is unreachable under the channel")
        return prediction

    def draw_records(self, truth: Simplex, n: int,
                     labeled: bool) -> list[PredictionRecord]:
        """Sample n (X, omega) pairs and predict each; label if asked."""
        if truth.size != self.channel.n_x:
            raise ValidationError("truth does not match the channel rows")
        if n <= 0:
            raise ValidationError("need a positive number of records")
        u = self._rng.random((n, 2))
        cum_truth = np.cumsum(truth.probs)
        xs = np.searchsorted(cum_truth, u[:, 0], side="right")
        xs = np.minimum(xs, truth.size - 1)
        omegas = np.empty(n, dtype=np.int64)
        cum_rows = np.cumsum(self.channel.channel, axis=1)
        for x in np.unique(xs):
            mask = xs == x
            omegas[mask] = np.searchsorted(cum_rows[x], u[mask, 1], side="right")
        omegas = np.minimum(omegas, self.channel.n_omega - 1)
        return [
            PredictionRecord(prediction=self._prediction_for[w],
                             true_x=int(x) if labeled else None)
            for x, w in zip(xs, omegas)
        ]


def write_predictions(records: Iterable[PredictionRecord], path) -> None:
    """One structured-text object per line; true_x present only when labeled."""
    with open(path, "w") as sink:
        for record in records:
            sink.write(json.dumps(record.to_dict()) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    records = []
    with open(path) as source:
        for lineno, line in enumerate(source, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as bad:
                raise ValidationError(f"line {lineno}: not valid JSON ({bad})") from None
            records.append(PredictionRecord.from_dict(payload))
    return records
