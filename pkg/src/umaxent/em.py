"""Maximum entropy estimation from noisy observations.

The estimation target is a distribution over model elements X, but the data
is an empirical distribution over observations omega linked to X only through
a known channel Pr(omega|X). The program constrains the model's feature
expectations to match the expectations under Pr(X|omega), which itself
depends on the distribution being solved for. That self-referential
constraint set is handled by expectation-maximization: the E-step freezes the
current estimate inside Bayes' rule to produce ordinary constraint targets,
the M-step is a standard dual solve against them, and the loop repeats from
random restarts, keeping the highest-entropy converged answer.

Two one-shot baselines live here as well: solve_fixed_bar (a fixed guess
inside Bayes instead of the evolving estimate) and solve_ml_x (decode each
observation to its most likely model element, then fit that directly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from umaxent.core import (
    FeatureMap,
    ObservationModel,
    Simplex,
    UmaxentError,
    ValidationError,
    Weights,
    _log_linear_raw,
    entropy,
)
from umaxent.solver import (
    SolveReport,
    SolverConfig,
    _egd_kernel,
    _is_identity_features,
    _log_prior_of,
    solve_dual,
    solve_maxent,
)

LIKELIHOOD_SLACK = 1e-12
MAX_CONSECUTIVE_REJECTIONS = 25


class InconsistencyError(UmaxentError):
    """Empirical mass sits on an observation the model cannot produce."""


@dataclass(frozen=True)
class EmConfig:
    """Knobs for the EM loop around the dual solver.

    em_convergence_tolerance bounds the L2 change of the weights between
    consecutive accepted M-steps; initial_lambda_range sets the half-width of
    the uniform box each restart's starting weights are drawn from. The inner
    solver's starting learning rate is carried across EM iterations: previous
    final rate times inner_rate_growth, capped at inner_rate_cap, reset to
    the solver default at each restart.
    """

    max_em_iterations: int = 5000
    em_convergence_tolerance: float = 1e-3
    em_norm_limit: float = 50.0
    restarts: int = 10
    inner_rate_growth: float = 1.1
    inner_rate_cap: float = 1000.0
    initial_lambda_range: float = 0.01
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        if self.max_em_iterations < 1:
            raise ValidationError("max_em_iterations must be positive")
        if self.em_convergence_tolerance <= 0 or self.em_norm_limit <= 0:
            raise ValidationError("tolerance and norm limit must be positive")
        if self.restarts < 1:
            raise ValidationError("restarts must be at least 1")
        if self.inner_rate_growth <= 0 or self.inner_rate_cap <= 0:
            raise ValidationError("rate growth and cap must be positive")
        if self.initial_lambda_range <= 0:
            raise ValidationError("initial_lambda_range must be positive")


@dataclass(frozen=True)
class UMaxEntResult:
    """Outcome of one uncertain-maxent estimation.

    constraint_residual_linf is the sup-norm gap between the two sides of the
    self-referential constraint, both evaluated at the returned weights.
    em_iterations counts M-step attempts in the selected restart. converged
    False means no restart met the weight-change criterion and the best
    non-converged attempt is reported instead.
    """

    lambda_: Weights
    posterior: Simplex
    entropy: float
    em_iterations: int
    restarts_used: int
    constraint_residual_linf: float
    log_likelihood: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lambda_.values],
            "posterior": [float(v) for v in self.posterior.probs],
            "entropy": self.entropy,
            "em_iterations": self.em_iterations,
            "restarts_used": self.restarts_used,
            "constraint_residual_linf": self.constraint_residual_linf,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
        }


def _weights_array(lam, n_features: int) -> np.ndarray:
    values = lam.values if isinstance(lam, Weights) else np.asarray(lam, dtype=np.float64)
    if values.shape != (n_features,):
        raise ValidationError("weights do not match the feature count")
    return values


def _check_dimensions(empirical_omega: Simplex, obs: ObservationModel,
                      features: FeatureMap) -> None:
    if obs.n_x != features.n_x:
        raise ValidationError("observation model and feature map disagree on |X|")
    if empirical_omega.size != obs.n_omega:
        raise ValidationError("empirical distribution does not match |Omega|")


def _bayes_mixture(p_x: np.ndarray, channel_cols: np.ndarray,
                   w_vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mixture over X of Bayes posteriors, weighted by the empirical mass.

    channel_cols holds only the columns with empirical support. Returns the
    mixture and the per-column marginals Pr(omega); a zero marginal is left
    for the caller to interpret (error or -inf, depending on the operation).
    """
    joint = channel_cols * p_x[:, None]
    marg = joint.sum(axis=0)
    ok = marg > 0.0
    if not np.all(ok):
        return np.full(p_x.shape[0], np.nan), marg
    mix = joint @ (w_vals / marg)
    return mix, marg


def e_step(lambda_prev, empirical_omega: Simplex, obs: ObservationModel,
           features: FeatureMap, prior: Simplex | None = None) -> np.ndarray:
    """Constraint targets for one EM round, with the estimate frozen in Bayes.

    Phi_hat_k = sum_omega P(omega) sum_X Pr(X|omega) phi_k(X), where the
    Bayes posterior uses the log-linear distribution of lambda_prev.
    Observations with zero empirical mass contribute nothing.
    """
    _check_dimensions(empirical_omega, obs, features)
    lam = _weights_array(lambda_prev, features.n_features)
    p_x = _log_linear_raw(lam, features.values, _log_prior_of(prior, features.n_x))
    w = empirical_omega.probs
    support = np.flatnonzero(w > 0.0)
    mix, marg = _bayes_mixture(p_x, obs.channel[:, support], w[support])
    if not np.all(marg > 0.0):
        bad = support[int(np.argmin(marg))]
        raise InconsistencyError(
            f"empirical mass on {obs.omega_labels[bad]} but the model "
            "gives it zero probability")
    return features.values @ mix


def log_likelihood(lam, empirical_omega: Simplex, obs: ObservationModel,
                   features: FeatureMap, prior: Simplex | None = None) -> float:
    """Average log probability of the observations under the model.

    sum_omega P(omega) ln sum_X Pr(omega|X) Pr_lambda(X). Returns -inf when
    the model puts zero probability on an observed omega.
    """
    _check_dimensions(empirical_omega, obs, features)
    values = _weights_array(lam, features.n_features)
    p_x = _log_linear_raw(values, features.values,
                          _log_prior_of(prior, features.n_x))
    w = empirical_omega.probs
    support = w > 0.0
    marg = p_x @ obs.channel[:, support]
    if np.any(marg <= 0.0):
        return float("-inf")
    return float(w[support] @ np.log(marg))


def check_stationarity(lam, empirical_omega: Simplex, obs: ObservationModel,
                       features: FeatureMap,
                       prior: Simplex | None = None) -> np.ndarray:
    """Gradient of the observation log-likelihood in the weights.

    Component k is e_step(lam)_k minus the model's own expectation of
    feature k; near zero at a converged solution.
    """
    values = _weights_array(lam, features.n_features)
    p_x = _log_linear_raw(values, features.values,
                          _log_prior_of(prior, features.n_x))
    return e_step(values, empirical_omega, obs, features, prior) - features.values @ p_x


@dataclass
class _RestartOutcome:
    index: int
    lam: np.ndarray
    posterior: np.ndarray
    entropy: float
    em_iterations: int
    converged: bool
    residual: float
    loglik: float


def solve_umaxent(empirical_omega: Simplex, obs: ObservationModel,
                  features: FeatureMap, em: EmConfig | None = None,
                  prior: Simplex | None = None,
                  seed=None) -> UMaxEntResult:
    """Estimate the model distribution behind noisy observations.

    Each restart draws starting weights uniformly from the configured box,
    then alternates E-steps and warm-started dual solves until the weights
    move less than em_convergence_tolerance in L2, walk past em_norm_limit
    (the restart is then marked non-converged), or max_em_iterations pass.
    An M-step whose weights lower the observation likelihood is rejected:
    the incumbent weights stay, the learning rate keeps evolving, and the
    loop continues. Among converged restarts the posterior with the highest
    entropy wins (ties to the earliest restart); if none converged, the best
    non-converged attempt is returned with converged False.

    seed feeds a SeedSequence; per-restart draws are independent streams, so
    results are reproducible for a given (seed, restarts) pair.
    """
    if em is None:
        em = EmConfig()
    _check_dimensions(empirical_omega, obs, features)

    fvals = features.values
    n_features = features.n_features
    w = empirical_omega.probs
    support = np.flatnonzero(w > 0.0)
    if np.any(obs.unreachable[support]):
        bad = support[int(np.argmax(obs.unreachable[support]))]
        raise InconsistencyError(
            f"empirical mass on {obs.omega_labels[bad]} but no model "
            "element can produce it")
    channel_cols = np.ascontiguousarray(obs.channel[:, support])
    w_vals = w[support]

    log_prior = _log_prior_of(prior, features.n_x)
    log_prior_arr = log_prior if log_prior is not None else np.zeros(features.n_x)
    is_identity = _is_identity_features(fvals)
    sc = em.solver
    reg_coeff = 0.0
    if sc.regularization_n is not None:
        reg_coeff = 2.0 / sc.regularization_n**2
    norm_limit_sq = sc.lambda_norm_limit**2

    def targets_at(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        p_x = _log_linear_raw(lam, fvals, log_prior)
        mix, marg = _bayes_mixture(p_x, channel_cols, w_vals)
        if not np.all(marg > 0.0):
            bad = support[int(np.argmin(marg))]
            raise InconsistencyError(
                f"empirical mass on {obs.omega_labels[bad]} but the model "
                "gives it zero probability")
        phi_hat = mix if is_identity else fvals @ mix
        return p_x, phi_hat, float(w_vals @ np.log(marg))

    outcomes: list[_RestartOutcome] = []
    streams = np.random.SeedSequence(seed).spawn(em.restarts)
    for index in range(em.restarts):
        rng = np.random.default_rng(streams[index])
        lam_prev = rng.uniform(-em.initial_lambda_range,
                               em.initial_lambda_range, n_features)
        _, phi_hat, loglik_prev = targets_at(lam_prev)
        rate = sc.initial_learning_rate
        converged = False
        diverged = False
        rejections = 0
        em_iterations = 0
        for _ in range(em.max_em_iterations):
            em_iterations += 1
            lam, _, _, final_rate = _egd_kernel(
                fvals, phi_hat, log_prior_arr, lam_prev, is_identity,
                sc.max_iterations, norm_limit_sq, sc.convergence_tolerance,
                rate, sc.learning_rate_increment, sc.oscillation_decay,
                sc.oscillation_window, sc.oscillation_switch_threshold,
                reg_coeff)
            rate = min(final_rate * em.inner_rate_growth, em.inner_rate_cap)
            if float(lam @ lam) > em.em_norm_limit**2:
                lam_prev = lam
                diverged = True
                break
            try:
                _, phi_new, loglik_new = targets_at(lam)
            except InconsistencyError:
                lam_prev = lam
                diverged = True
                break
            if loglik_new < loglik_prev - LIKELIHOOD_SLACK:
                rejections += 1
                if rejections > MAX_CONSECUTIVE_REJECTIONS:
                    break
                continue
            rejections = 0
            delta = float(np.linalg.norm(lam - lam_prev))
            lam_prev = lam
            phi_hat = phi_new
            loglik_prev = loglik_new
            if delta < em.em_convergence_tolerance:
                converged = True
                break

        p_x = _log_linear_raw(lam_prev, fvals, log_prior)
        mix, marg = _bayes_mixture(p_x, channel_cols, w_vals)
        if np.all(marg > 0.0):
            phi_hat_final = mix if is_identity else fvals @ mix
            model_phi = p_x if is_identity else fvals @ p_x
            residual = float(np.abs(model_phi - phi_hat_final).max())
            loglik = float(w_vals @ np.log(marg))
        else:
            residual = float("inf")
            loglik = float("-inf")
        outcomes.append(_RestartOutcome(
            index=index,
            lam=lam_prev,
            posterior=p_x,
            entropy=entropy(p_x),
            em_iterations=em_iterations,
            converged=converged and not diverged,
            residual=residual,
            loglik=loglik,
        ))

    pool = [o for o in outcomes if o.converged] or outcomes
    best = max(pool, key=lambda o: (o.entropy, -o.index))
    return UMaxEntResult(
        lambda_=Weights(best.lam),
        posterior=Simplex(best.posterior),
        entropy=best.entropy,
        em_iterations=best.em_iterations,
        restarts_used=em.restarts,
        constraint_residual_linf=best.residual,
        log_likelihood=best.loglik,
        converged=best.converged,
    )


def solve_fixed_bar(bar: Simplex, empirical_omega: Simplex,
                    obs: ObservationModel, features: FeatureMap,
                    config: SolverConfig | None = None) -> SolveReport:
    """One-shot variant with a fixed guess inside Bayes instead of EM.

    Builds the constraint targets once from Pr(X|omega) proportional to
    Pr(omega|X) bar(X), then runs the standard dual solve. With bar equal to
    the true distribution and exact data this recovers the truth; a wrong
    bar biases the answer no matter how much data arrives.
    """
    _check_dimensions(empirical_omega, obs, features)
    if bar.size != obs.n_x:
        raise ValidationError("bar does not match the model space")
    w = empirical_omega.probs
    support = np.flatnonzero(w > 0.0)
    mix, marg = _bayes_mixture(bar.probs, obs.channel[:, support], w[support])
    if not np.all(marg > 0.0):
        bad = support[int(np.argmin(marg))]
        raise InconsistencyError(
            f"empirical mass on {obs.omega_labels[bad]} but the fixed bar "
            "gives it zero probability")
    return solve_dual(features.values @ mix, features, config)


def solve_ml_x(empirical_omega: Simplex, obs: ObservationModel,
               features: FeatureMap,
               config: SolverConfig | None = None) -> SolveReport:
    """Decode-then-fit baseline: each observation becomes its most likely X.

    Maps omega to argmax_X Pr(omega|X) (uniform prior over X; ties go to the
    lowest index), accumulates the empirical mass into a pseudo-empirical
    distribution over X, and fits standard maximum entropy to that.
    """
    _check_dimensions(empirical_omega, obs, features)
    w = empirical_omega.probs
    decode = np.argmax(obs.channel, axis=0)
    pseudo = np.zeros(obs.n_x)
    np.add.at(pseudo, decode, w)
    return solve_maxent(Simplex(pseudo), features, config)
