"""Latent preference bandits: order-constrained posterior sampling and its
baselines, synthetic and ratings-style environments, a benchmark harness, and
offline recovery of the latent ordering model."""

__version__ = "0.1.0"

from .model import (
    BanditInstance,
    LatentPreferenceModel,
    ObservationHistory,
    PreferenceOrdering,
    best_arm,
    is_consistent,
    rank_of,
)
from .isotonic import IsotonicFit, constrained_mle, count_active_constraints, fit_pava
from .algorithms import (
    POLICY_NAMES,
    DuelingEvent,
    GaussianTSPolicy,
    LpbTSPolicy,
    MTSPolicy,
    Policy,
    PosteriorState,
    SubsetTSPolicy,
    dueling_posterior,
    inversion_count,
    make_policy,
    pair_consecutive,
)
from .environments import (
    RatingsConfig,
    SyntheticConfig,
    active_action_set,
    generate_instance,
    generate_model,
    ratings_means,
    rescale_instance,
    sample_reward,
)
from .recovery import (
    BTMFit,
    ClusterAssignment,
    ComparisonTable,
    RecoveryResult,
    collision_probability,
    extract_comparisons,
    fit_btm,
    ingest_ratings_csv,
    kendall_tau,
    kmeans_zero_impute,
    matching_error,
    min_cost_assignment,
    recover_orderings,
)
from .harness import (
    ExperimentConfig,
    RunRecord,
    SweepResult,
    derive_seed,
    run_instance,
    run_sweep,
    standardized_ratings,
    write_outputs,
)
