"""Model-space types and information measures.

Distributions over a finite model space are plain probability vectors, an
observation model is a row-stochastic channel from model elements to
observations, and log-linear distributions are parameterized by feature
weights. All entropies and divergences are in nats.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOLERANCE = 1e-9


class UmaxentError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(UmaxentError):
    """Raised when an input fails a structural precondition."""


def _as_float_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def _normalize_row(row: np.ndarray, name: str) -> np.ndarray:
    # Entries may carry float noise down to -SIMPLEX_TOLERANCE; anything more
    # negative is a real sign error. Renormalization is exact division.
    if np.any(row < -SIMPLEX_TOLERANCE):
        raise ValidationError(f"{name} has negative entries")
    row = np.where(row < 0.0, 0.0, row)
    total = row.sum()
    if abs(total - 1.0) > SIMPLEX_TOLERANCE:
        raise ValidationError(f"{name} sums to {total!r}, expected 1 within {SIMPLEX_TOLERANCE}")
    return row / total


@dataclass(frozen=True)
class ModelSpace:
    """Finite set of model elements, identified by unique string labels."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        if len(labels) == 0:
            raise ValidationError("ModelSpace needs at least one label")
        if len(set(labels)) != len(labels):
            raise ValidationError("ModelSpace labels must be unique")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def of_size(cls, n: int, prefix: str = "x") -> "ModelSpace":
        return cls(tuple(f"{prefix}{i}" for i in range(n)))

    def to_dict(self) -> dict:
        return {"labels": list(self.labels)}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpace":
        return cls(tuple(data["labels"]))


@dataclass(frozen=True, eq=False)
class Simplex:
    """Probability vector over a finite space.

    Construction validates non-negativity and renormalizes exactly when the
    sum is within SIMPLEX_TOLERANCE of 1; anything further off is rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _normalize_row(_as_float_array(self.probs, "probs", 1), "probs")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "Simplex":
        if n < 1:
            raise ValidationError("uniform simplex needs n >= 1")
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, index: int) -> "Simplex":
        if not 0 <= index < n:
            raise ValidationError(f"point mass index {index} out of range for size {n}")
        probs = np.zeros(n)
        probs[index] = 1.0
        return cls(probs)

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Simplex":
        return cls(np.asarray(data["probs"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Row-stochastic channel Pr(omega | X): one row per model element.

    Columns of all zeros mark observations no model element can emit; they are
    tracked in `unreachable` rather than rejected, and downstream consumers
    must not route empirical mass through them.
    """

    channel: np.ndarray
    omega_labels: tuple[str, ...] = None  # type: ignore[assignment]
    unreachable: np.ndarray = field(init=False)

    def __post_init__(self):
        channel = _as_float_array(self.channel, "channel", 2)
        rows = [ _normalize_row(channel[i], f"channel row {i}") for i in range(channel.shape[0]) ]
        channel = np.stack(rows)
        channel.setflags(write=False)
        object.__setattr__(self, "channel", channel)
        labels = self.omega_labels
        if labels is None:
            labels = tuple(f"w{j}" for j in range(channel.shape[1]))
        else:
            labels = tuple(str(l) for l in labels)
        if len(labels) != channel.shape[1]:
            raise ValidationError(
                f"got {len(labels)} omega labels for {channel.shape[1]} channel columns")
        if len(set(labels)) != len(labels):
            raise ValidationError("omega labels must be unique")
        object.__setattr__(self, "omega_labels", labels)
        unreachable = ~np.any(channel > 0.0, axis=0)
        unreachable.setflags(write=False)
        object.__setattr__(self, "unreachable", unreachable)

    @property
    def n_x(self) -> int:
        return self.channel.shape[0]

    @property
    def n_omega(self) -> int:
        return self.channel.shape[1]

    @classmethod
    def identity(cls, n: int) -> "ObservationModel":
        return cls(np.eye(n))

    def to_dict(self) -> dict:
        return {"channel": self.channel.tolist(), "omega_labels": list(self.omega_labels)}

    @classmethod
    def from_dict(cls, data: dict) -> "ObservationModel":
        return cls(np.asarray(data["channel"], dtype=np.float64),
                   tuple(data["omega_labels"]) if "omega_labels" in data else None)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Real feature functions over the model space, one row per feature."""

    values: np.ndarray

    def __post_init__(self):
        values = _as_float_array(self.values, "features", 2)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_x(self) -> int:
        return self.values.shape[1]

    @classmethod
    def indicator(cls, n: int) -> "FeatureMap":
        """One indicator feature per model element (the uninformative choice)."""
        return cls(np.eye(n))

    def to_dict(self) -> dict:
        return {"features": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureMap":
        return cls(np.asarray(data["features"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Weights:
    """Feature weight vector (the lambdas of a log-linear distribution)."""

    values: np.ndarray

    def __post_init__(self):
        values = _as_float_array(self.values, "weights", 1).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @classmethod
    def zeros(cls, n: int) -> "Weights":
        return cls(np.zeros(n))

    def to_dict(self) -> dict:
        return {"values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Weights":
        return cls(np.asarray(data["values"], dtype=np.float64))


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, Simplex) else np.asarray(p, dtype=np.float64)


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    probs = _probs(p)
    positive = probs[probs > 0.0]
    return float(-(positive * np.log(positive)).sum())


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; +inf where p puts mass outside q's support."""
    pp, qq = _probs(p), _probs(q)
    if pp.shape != qq.shape:
        raise ValidationError("KL divergence needs distributions of equal size")
    mask = pp > 0.0
    if np.any(qq[mask] == 0.0):
        return float("inf")
    return float((pp[mask] * np.log(pp[mask] / qq[mask])).sum())


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats; symmetric, bounded by ln 2."""
    pp, qq = _probs(p), _probs(q)
    if pp.shape != qq.shape:
        raise ValidationError("JSD needs distributions of equal size")
    m = 0.5 * (pp + qq)
    return 0.5 * kl_divergence(pp, m) + 0.5 * kl_divergence(qq, m)


def _log_linear_raw(lam: np.ndarray, feature_values: np.ndarray,
                    log_prior: np.ndarray | None = None) -> np.ndarray:
    scores = lam @ feature_values
    if log_prior is not None:
        scores = scores + log_prior
    scores = scores - scores.max()
    probs = np.exp(scores)
    return probs / probs.sum()


def log_linear_distribution(weights, features: FeatureMap,
                            prior: Simplex | None = None) -> Simplex:
    """Pr(X) proportional to q(X) exp(sum_k lambda_k phi_k(X)).

    The prior q defaults to uniform and must be strictly positive when given.
    weights may be a Weights instance or a plain array.
    """
    if not isinstance(weights, Weights):
        weights = Weights(np.asarray(weights, dtype=np.float64))
    if weights.size != features.n_features:
        raise ValidationError(
            f"{weights.size} weights do not match {features.n_features} features")
    log_prior = None
    if prior is not None:
        if prior.size != features.n_x:
            raise ValidationError("prior size does not match the model space")
        if np.any(prior.probs == 0.0):
            raise ValidationError("prior must be strictly positive")
        log_prior = np.log(prior.probs)
    return Simplex(_log_linear_raw(weights.values, features.values, log_prior))


def marginal_omega(px: Simplex, obs: ObservationModel) -> Simplex:
    """Observation marginal Pr(omega) = sum_X Pr(omega | X) Pr(X)."""
    if px.size != obs.n_x:
        raise ValidationError("distribution size does not match the channel")
    return Simplex(px.probs @ obs.channel)


def posterior_given_observation(px: Simplex, obs: ObservationModel
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Bayes posteriors Pr(X | omega), one row per observation.

    Returns (posteriors, defined). Rows for observations with zero marginal
    probability are NaN and flagged False in `defined`; callers must check the
    flag instead of consuming those rows.
    """
    if px.size != obs.n_x:
        raise ValidationError("distribution size does not match the channel")
    joint = obs.channel * px.probs[:, None]          # (n_x, n_omega)
    marg = joint.sum(axis=0)
    defined = marg > 0.0
    post = np.full((obs.n_omega, obs.n_x), np.nan)
    post[defined] = (joint[:, defined] / marg[defined]).T
    post.setflags(write=False)
    defined.setflags(write=False)
    return post, defined


_TYPE_KEYS = {
    "labels": ModelSpace,
    "probs": Simplex,
    "channel": ObservationModel,
    "features": FeatureMap,
    "values": Weights,
}


def to_json(obj, path=None) -> str:
    """Serialize any core type to JSON text; write to `path` when given."""
    text = json.dumps(obj.to_dict(), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def from_json(text_or_path, cls=None):
    """Inverse of to_json. Infers the type from field names unless `cls` given."""
    text = text_or_path
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, TypeError):
        with open(text_or_path) as fh:
            data = json.load(fh)
    if cls is None:
        for key, candidate in _TYPE_KEYS.items():
            if key in data:
                cls = candidate
                break
        else:
            raise ValidationError(f"cannot infer type from fields {sorted(data)}")
    return cls.from_dict(data)
