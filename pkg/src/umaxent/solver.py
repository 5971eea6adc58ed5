"""Dual solver for maximum entropy programs.

The primal program (maximize entropy subject to matching feature expectations)
is solved through its convex dual over the feature weights lambda:

    L(lambda) = log Z(lambda) - sum_k lambda_k target_k

with Z the partition sum of the log-linear family. The minimizer is found by
adaptive exponentiated gradient descent on split weights lambda = lp - lm
(Kivinen and Warmuth style), which keeps every multiplicative update alive
through a small positive floor on both halves. The iteration is JIT-compiled;
the surrounding API validates inputs and packages diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from numba import njit

from umaxent.core import (
    FeatureMap,
    Simplex,
    ValidationError,
    Weights,
    _log_linear_raw,
)

SPLIT_FLOOR = 1e-3
ERROR_TAG = 1e-12
ERROR_STD_WINDOW = 5

_STOP_CONVERGED = 0
_STOP_MAX_ITERATIONS = 1
_STOP_NORM_EXCEEDED = 2


class StopReason(Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    NORM_EXCEEDED = "norm_exceeded"


_STOP_BY_CODE = {
    _STOP_CONVERGED: StopReason.CONVERGED,
    _STOP_MAX_ITERATIONS: StopReason.MAX_ITERATIONS,
    _STOP_NORM_EXCEEDED: StopReason.NORM_EXCEEDED,
}


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the exponentiated gradient descent loop.

    regularization_n, when set to a sample count N, adds sum_k lambda_k^2 / N^2
    to the minimized dual (gradient term 2 lambda_k / N^2), shrinking weights
    toward zero when data is scarce.
    """

    max_iterations: int = 5000
    lambda_norm_limit: float = 50.0
    convergence_tolerance: float = 1e-7
    initial_learning_rate: float = 1.0
    learning_rate_increment: float = 1e-5
    oscillation_decay: float = 0.99
    oscillation_window: int = 5
    oscillation_switch_threshold: int = 3
    regularization_n: float | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be positive")
        if self.lambda_norm_limit <= 0 or self.convergence_tolerance <= 0:
            raise ValidationError("norm limit and tolerance must be positive")
        if self.initial_learning_rate <= 0:
            raise ValidationError("initial_learning_rate must be positive")
        if self.oscillation_window < 2:
            raise ValidationError("oscillation_window must be at least 2")
        if self.regularization_n is not None and self.regularization_n <= 0:
            raise ValidationError("regularization_n must be positive when set")


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one dual solve.

    `iterations` counts gradient evaluations; `stop_reason` NORM_EXCEEDED is a
    reported outcome (weights walked past the norm limit), not an exception.
    """

    weights: Weights
    posterior: Simplex
    iterations: int
    stop_reason: StopReason
    final_gradient_linf: float
    final_learning_rate: float

    @property
    def converged(self) -> bool:
        return self.stop_reason is StopReason.CONVERGED


def feature_expectations(p, features: FeatureMap) -> np.ndarray:
    """E_p[phi_k] for every feature k."""
    probs = p.probs if isinstance(p, Simplex) else np.asarray(p, dtype=np.float64)
    if probs.shape[0] != features.n_x:
        raise ValidationError("distribution size does not match the feature map")
    return features.values @ probs


def _log_partition(lam: np.ndarray, fvals: np.ndarray,
                   log_prior: np.ndarray | None) -> float:
    scores = lam @ fvals
    if log_prior is not None:
        scores = scores + log_prior
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()))


def _log_prior_of(prior: Simplex | None, n_x: int) -> np.ndarray | None:
    if prior is None:
        return None
    if prior.size != n_x:
        raise ValidationError("prior size does not match the model space")
    if np.any(prior.probs == 0.0):
        raise ValidationError("prior must be strictly positive")
    return np.log(prior.probs)


def dual_value(lam, target, features: FeatureMap, prior: Simplex | None = None,
               regularization_n: float | None = None) -> float:
    """Dual objective log Z(lambda) - lambda . target (+ regularization)."""
    lam = lam.values if isinstance(lam, Weights) else np.asarray(lam, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    value = _log_partition(lam, features.values, _log_prior_of(prior, features.n_x))
    value -= float(lam @ target)
    if regularization_n is not None:
        value += float(lam @ lam) / regularization_n**2
    return value


def dual_gradient(lam, target, features: FeatureMap, prior: Simplex | None = None,
                  regularization_n: float | None = None) -> np.ndarray:
    """Gradient of the dual: model feature expectations minus the target."""
    lam = lam.values if isinstance(lam, Weights) else np.asarray(lam, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    probs = _log_linear_raw(lam, features.values, _log_prior_of(prior, features.n_x))
    grad = features.values @ probs - target
    if regularization_n is not None:
        grad = grad + (2.0 / regularization_n**2) * lam
    return grad


@njit(cache=True)
def _egd_kernel(fvals, target, log_prior, lam0, is_identity,
                max_iterations, norm_limit_sq, tol, rate0, rate_increment,
                osc_decay, osc_window, osc_threshold, reg_coeff):
    # Per-iteration order: gradient, plateau check, multiplicative update,
    # norm check, rate growth, oscillation damping. A break skips everything
    # after it, so the reported rate is the one the stopped iteration used.
    n_k, n_x = fvals.shape
    lp = np.empty(n_k)
    lm = np.empty(n_k)
    for k in range(n_k):
        v = lam0[k]
        lp[k] = (v if v > 0.0 else 0.0) + SPLIT_FLOOR
        lm[k] = (-v if v < 0.0 else 0.0) + SPLIT_FLOOR
    lam = lp - lm
    probs = np.empty(n_x)
    grad = np.empty(n_k)
    errors = np.zeros(ERROR_STD_WINDOW)
    hist = np.empty((osc_window, n_k))
    # The index tags add a constant to every L1 error, which the std ignores.
    tag_total = ERROR_TAG * (n_k * (n_k - 1) // 2)
    rate = rate0
    stop = _STOP_MAX_ITERATIONS
    iterations = 0
    for it in range(1, max_iterations + 1):
        iterations = it
        if is_identity:
            mx = -np.inf
            for i in range(n_x):
                s = lam[i] + log_prior[i]
                probs[i] = s
                if s > mx:
                    mx = s
        else:
            mx = -np.inf
            for i in range(n_x):
                s = log_prior[i]
                for k in range(n_k):
                    s += lam[k] * fvals[k, i]
                probs[i] = s
                if s > mx:
                    mx = s
        z = 0.0
        for i in range(n_x):
            probs[i] = np.exp(probs[i] - mx)
            z += probs[i]
        for i in range(n_x):
            probs[i] /= z

        err = tag_total
        if is_identity:
            for k in range(n_k):
                g = probs[k] - target[k] + reg_coeff * lam[k]
                grad[k] = g
                err += abs(g)
        else:
            for k in range(n_k):
                g = -target[k] + reg_coeff * lam[k]
                for i in range(n_x):
                    g += fvals[k, i] * probs[i]
                grad[k] = g
                err += abs(g)
        errors[(it - 1) % ERROR_STD_WINDOW] = err
        if it >= ERROR_STD_WINDOW:
            mean = 0.0
            for j in range(ERROR_STD_WINDOW):
                mean += errors[j]
            mean /= ERROR_STD_WINDOW
            var = 0.0
            for j in range(ERROR_STD_WINDOW):
                d = errors[j] - mean
                var += d * d
            if np.sqrt(var / ERROR_STD_WINDOW) < tol:
                stop = _STOP_CONVERGED
                break

        nsq = 0.0
        for k in range(n_k):
            x = -rate * grad[k]
            if x > 500.0:
                x = 500.0
            elif x < -500.0:
                x = -500.0
            s = np.exp(x)
            lp[k] *= s
            lm[k] /= s
            lam[k] = lp[k] - lm[k]
            nsq += lam[k] * lam[k]
        if nsq > norm_limit_sq:
            stop = _STOP_NORM_EXCEEDED
            break

        rate += rate_increment
        row = (it - 1) % osc_window
        for k in range(n_k):
            hist[row, k] = lam[k]
        if it >= osc_window:
            switches = 0
            oldest = it % osc_window
            for k in range(n_k):
                prev_sign = 2.0
                prev_val = hist[oldest, k]
                for j in range(1, osc_window):
                    cur = hist[(oldest + j) % osc_window, k]
                    d = cur - prev_val
                    sgn = 0.0
                    if d > 0.0:
                        sgn = 1.0
                    elif d < 0.0:
                        sgn = -1.0
                    if prev_sign != 2.0 and sgn * prev_sign < 0.0:
                        switches += 1
                    prev_sign = sgn
                    prev_val = cur
            if switches > osc_threshold:
                rate *= osc_decay
    return lam, iterations, stop, rate


def _is_identity_features(fvals: np.ndarray) -> bool:
    n_k, n_x = fvals.shape
    return n_k == n_x and bool((fvals == np.eye(n_x)).all())


def solve_dual(target, features: FeatureMap, config: SolverConfig | None = None,
               prior: Simplex | None = None, initial_lambda=None) -> SolveReport:
    """Minimize the dual by adaptive exponentiated gradient descent.

    Stops on whichever comes first: the iteration cap, the weight norm limit,
    or convergence, declared when the standard deviation of the per-iteration
    error over the last 5 iterations falls below the tolerance. The error is
    the L1 norm of the vector |g_i| + i * 1e-12 (the index tag keeps swapped
    error components from masquerading as a plateau).

    The learning rate starts at config.initial_learning_rate, grows by the
    configured increment after each iteration, and is damped by the
    oscillation decay whenever the component-wise weight history over the
    oscillation window shows more sign switches than the threshold.
    """
    if config is None:
        config = SolverConfig()
    fvals = features.values
    n_features = features.n_features
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (n_features,):
        raise ValidationError(
            f"target shape {target.shape} does not match {n_features} features")
    if not np.all(np.isfinite(target)):
        raise ValidationError("target must be finite")
    log_prior = _log_prior_of(prior, features.n_x)

    if initial_lambda is None:
        lam0 = np.zeros(n_features)
    else:
        lam0 = (initial_lambda.values if isinstance(initial_lambda, Weights)
                else np.asarray(initial_lambda, dtype=np.float64))
        if lam0.shape != (n_features,):
            raise ValidationError("initial_lambda does not match the feature count")

    reg_coeff = 0.0
    if config.regularization_n is not None:
        reg_coeff = 2.0 / config.regularization_n**2

    lam, iterations, stop_code, rate = _egd_kernel(
        fvals,
        target,
        log_prior if log_prior is not None else np.zeros(features.n_x),
        lam0,
        _is_identity_features(fvals),
        config.max_iterations,
        config.lambda_norm_limit**2,
        config.convergence_tolerance,
        config.initial_learning_rate,
        config.learning_rate_increment,
        config.oscillation_decay,
        config.oscillation_window,
        config.oscillation_switch_threshold,
        reg_coeff,
    )

    posterior = _log_linear_raw(lam, fvals, log_prior)
    final_grad = dual_gradient(lam, target, features, prior,
                               config.regularization_n)
    return SolveReport(
        weights=Weights(lam),
        posterior=Simplex(posterior),
        iterations=int(iterations),
        stop_reason=_STOP_BY_CODE[int(stop_code)],
        final_gradient_linf=float(np.abs(final_grad).max()),
        final_learning_rate=float(rate),
    )


def solve_maxent(empirical: Simplex, features: FeatureMap,
                 config: SolverConfig | None = None,
                 prior: Simplex | None = None) -> SolveReport:
    """Standard maximum entropy fit: match the empirical feature expectations."""
    target = feature_expectations(empirical, features)
    return solve_dual(target, features, config, prior)


def with_regularization(config: SolverConfig, n: float | None) -> SolverConfig:
    return replace(config, regularization_n=n)
