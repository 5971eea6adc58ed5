"""Maximum entropy estimation over hidden model elements from noisy observations."""

__version__ = "0.1.0"

from umaxent.core import (
    FeatureMap,
    ModelSpace,
    ObservationModel,
    Simplex,
    UmaxentError,
    ValidationError,
    Weights,
    entropy,
    from_json,
    jsd,
    kl_divergence,
    log_linear_distribution,
    marginal_omega,
    posterior_given_observation,
    to_json,
)
from umaxent.blackbox import (
    ConfusionModel,
    PredictionRecord,
    SyntheticBlackBox,
    aggregate_predictions,
    estimate_confusion,
    read_predictions,
    solve_umaxent_blackbox,
    write_predictions,
)
from umaxent.harness import (
    BLACKBOX_VARIANTS,
    CSV_HEADER,
    DEFAULT_SCHEDULE,
    DrawnDataset,
    ExperimentConfig,
    GenerationError,
    SummaryRow,
    TrialResult,
    VARIANTS,
    draw_dataset,
    gen_negative_observation_model,
    gen_observation_model,
    gen_true_distribution,
    results_to_csv_text,
    run_blackbox,
    run_negative_obs,
    run_random_models,
    summarize,
    write_results_csv,
    write_run_metadata,
)
from umaxent.latent import (
    LatentStructure,
    expand_latent,
    latent_constraint_residual,
    solve_latent_maxent,
)
from umaxent.em import (
    EmConfig,
    InconsistencyError,
    UMaxEntResult,
    check_stationarity,
    e_step,
    log_likelihood,
    solve_fixed_bar,
    solve_ml_x,
    solve_umaxent,
)
from umaxent.solver import (
    SolveReport,
    SolverConfig,
    StopReason,
    dual_gradient,
    dual_value,
    feature_expectations,
    solve_dual,
    solve_maxent,
    with_regularization,
)

__all__ = [
    "BLACKBOX_VARIANTS",
    "CSV_HEADER",
    "ConfusionModel",
    "DEFAULT_SCHEDULE",
    "DrawnDataset",
    "EmConfig",
    "ExperimentConfig",
    "FeatureMap",
    "GenerationError",
    "InconsistencyError",
    "LatentStructure",
    "ModelSpace",
    "ObservationModel",
    "PredictionRecord",
    "Simplex",
    "SolveReport",
    "SolverConfig",
    "StopReason",
    "SummaryRow",
    "SyntheticBlackBox",
    "TrialResult",
    "UMaxEntResult",
    "UmaxentError",
    "VARIANTS",
    "ValidationError",
    "Weights",
    "aggregate_predictions",
    "check_stationarity",
    "draw_dataset",
    "dual_gradient",
    "dual_value",
    "e_step",
    "entropy",
    "estimate_confusion",
    "expand_latent",
    "feature_expectations",
    "from_json",
    "gen_negative_observation_model",
    "gen_observation_model",
    "gen_true_distribution",
    "jsd",
    "kl_divergence",
    "latent_constraint_residual",
    "log_likelihood",
    "log_linear_distribution",
    "marginal_omega",
    "posterior_given_observation",
    "read_predictions",
    "results_to_csv_text",
    "run_blackbox",
    "run_negative_obs",
    "run_random_models",
    "solve_dual",
    "solve_fixed_bar",
    "solve_latent_maxent",
    "solve_maxent",
    "solve_ml_x",
    "solve_umaxent",
    "solve_umaxent_blackbox",
    "summarize",
    "to_json",
    "with_regularization",
    "write_predictions",
    "write_results_csv",
    "write_run_metadata",
]
