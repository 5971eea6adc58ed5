"""Latent maximum entropy as a reduction to the noisy-observation program.

A model element X splits into a visible part Y and a perfectly hidden part Z.
Estimating Pr(X) from empirical Y data is the same problem as estimating from
noisy observations whose channel is the indicator Pr(Y|X): each X emits its
own Y with certainty. The reduction below builds that channel and delegates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from umaxent.core import (
    FeatureMap,
    ObservationModel,
    Simplex,
    ValidationError,
)
from umaxent.em import EmConfig, InconsistencyError, UMaxEntResult, solve_umaxent


@dataclass(frozen=True)
class LatentStructure:
    """Decomposition of the model space into visible and hidden parts.

    z_map[i] lists the hidden states available under y_labels[i];
    x_index[i][j] is the model-space index of the pair
    (y_labels[i], z_map[i][j]). The flattened x_index must be a permutation
    of 0..n-1: every X belongs to exactly one (Y, Z) pair.
    """

    y_labels: tuple[str, ...]
    z_map: tuple[tuple[str, ...], ...]
    x_index: tuple[tuple[int, ...], ...]
    n_x: int = field(init=False)

    def __post_init__(self):
        y_labels = tuple(self.y_labels)
        z_map = tuple(tuple(zs) for zs in self.z_map)
        x_index = tuple(tuple(int(i) for i in row) for row in self.x_index)
        object.__setattr__(self, "y_labels", y_labels)
        object.__setattr__(self, "z_map", z_map)
        object.__setattr__(self, "x_index", x_index)
        if len(y_labels) == 0:
            raise ValidationError("structure needs at least one visible state")
        if len(set(y_labels)) != len(y_labels):
            raise ValidationError("visible labels must be unique")
        if len(z_map) != len(y_labels) or len(x_index) != len(y_labels):
            raise ValidationError("z_map and x_index must align with y_labels")
        for zs, row in zip(z_map, x_index):
            if len(zs) == 0:
                raise ValidationError("every visible state needs a hidden state")
            if len(zs) != len(row):
                raise ValidationError("z_map and x_index rows must align")
            if len(set(zs)) != len(zs):
                raise ValidationError("hidden labels must be unique per visible state")
        flat = [i for row in x_index for i in row]
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError(
                "x_index must cover the model space exactly once")
        object.__setattr__(self, "n_x", len(flat))

    @property
    def n_y(self) -> int:
        return len(self.y_labels)

    def to_dict(self) -> dict:
        return {
            "y_labels": list(self.y_labels),
            "z_map": [list(zs) for zs in self.z_map],
            "x_index": [list(row) for row in self.x_index],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LatentStructure":
        try:
            return cls(
                y_labels=tuple(payload["y_labels"]),
                z_map=tuple(tuple(zs) for zs in payload["z_map"]),
                x_index=tuple(tuple(row) for row in payload["x_index"]),
            )
        except KeyError as missing:
            raise ValidationError(f"structure is missing {missing}") from None


def expand_latent(structure: LatentStructure) -> ObservationModel:
    """Indicator channel of the visible part: Pr(Y|X) is 1 at X's own Y."""
    channel = np.zeros((structure.n_x, structure.n_y))
    for y_pos, row in enumerate(structure.x_index):
        for x in row:
            channel[x, y_pos] = 1.0
    return ObservationModel(channel, omega_labels=structure.y_labels)


def solve_latent_maxent(empirical_y: Simplex, structure: LatentStructure,
                        features: FeatureMap, em: EmConfig | None = None,
                        prior: Simplex | None = None,
                        seed=None) -> UMaxEntResult:
    """Fit maximum entropy over X from empirical data on the visible part."""
    if empirical_y.size != structure.n_y:
        raise ValidationError("empirical distribution does not match y_labels")
    return solve_umaxent(empirical_y, expand_latent(structure), features,
                         em, prior, seed)


def latent_constraint_residual(p, empirical_y: Simplex,
                               structure: LatentStructure,
                               features: FeatureMap) -> float:
    """Sup-norm gap in the hidden-state constraint, evaluated directly.

    Compares sum_X Pr(X) phi_k against
    sum_Y P(Y) sum_{Z under Y} Pr(Z|Y) phi_k without going through the
    observation-channel reduction, so it can cross-check solve_latent_maxent.
    """
    probs = p.probs if isinstance(p, Simplex) else np.asarray(p, dtype=np.float64)
    if probs.shape[0] != structure.n_x:
        raise ValidationError("distribution does not match the model space")
    if empirical_y.size != structure.n_y:
        raise ValidationError("empirical distribution does not match y_labels")
    lhs = features.values @ probs
    rhs = np.zeros(features.n_features)
    for y_pos, row in enumerate(structure.x_index):
        mass = empirical_y.probs[y_pos]
        if mass == 0.0:
            continue
        idx = np.asarray(row)
        within = probs[idx]
        total = within.sum()
        if total <= 0.0:
            raise InconsistencyError(
                f"empirical mass on {structure.y_labels[y_pos]} but the "
                "distribution gives its hidden states zero probability")
        rhs += mass * (features.values[:, idx] @ (within / total))
    return float(np.abs(lhs - rhs).max())
