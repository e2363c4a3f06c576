"""Collaborative filtering with sliced anti-symmetric factor models.

Public surface re-exports the core types and operations; see the individual
modules for the full API.
"""

from .data import (
    ImplicitInteractions,
    InteractionDataset,
    LooSplit,
    load_interactions,
    loo_split,
    mask_missing,
    observations_from_implicit,
    sample_negative,
    validate_split,
    write_interactions,
)
from .evaluation import (
    ConsistencyStats,
    EvalReport,
    consistency_report,
    evaluate_split,
    hit_ratio,
    rank_m1,
    rank_m2,
    score_m2,
)
from .gibbs import (
    ChainResult,
    GibbsConfig,
    ProbitState,
    run_chain,
    sample_truncated_normal,
    write_posterior_summary,
)
from .model import (
    FactorModel,
    Observation,
    Observations,
    find_preference_cycles,
    load_checkpoint,
    log_likelihood,
    pair_scores,
    preference,
    prob_prefer,
    save_checkpoint,
    sparsity,
    transitivity_residual,
    user_slice,
)
from .sgd import (
    GradientBundle,
    TrainConfig,
    TrainingLog,
    init_model,
    observation_gradients,
    sgd_epoch,
    sgd_epoch_observations,
    train,
    train_bpr,
    train_on_observations,
    write_training_log,
)
from .simulation import (
    SimSpec,
    SimTruth,
    StudyReport,
    frobenius_mse,
    generate_truth,
    run_simulation_study,
    write_study_report,
)

__version__ = "0.1.0"
