"""Transductive open-set few-shot recognition on pre-extracted features."""

from .baselines import BaselineOutput, knn_outlier_scores, knn_predictions, simpleshot_maxprob
from .data import (
    FeatureSet,
    SyntheticSpec,
    load_feature_table,
    synth_gaussian_features,
    write_feature_table,
)
from .episodes import (
    Episode,
    EpisodeSpec,
    EpisodeTruth,
    TaskInputs,
    imbalance_presets,
    preset_spec,
    sample_episode,
)
from .errors import (
    ConfigError,
    DegenerateVectorError,
    DomainError,
    FeatureTableError,
    OptimizationError,
    OracleError,
    OsfslError,
    ParameterError,
    SamplingError,
)
from .losses import LossBreakdown, LossWeights, class_weights, total_loss
from .metrics import (
    EpisodeOutcome,
    MetricsSummary,
    accuracy,
    aggregate,
    aupr,
    auroc,
    episode_metrics,
    precision_at_recall,
)
from .model import (
    EOL,
    ORIENT_FLIPPED,
    ORIENT_VERBATIM,
    OSTIM,
    ModelState,
    PosteriorTable,
    TaskEmbedding,
    center_episode,
    eol_inlier_probability,
    eol_posteriors,
    init_state,
    ostim_posteriors,
)
from .numerics import (
    cosine_similarity,
    finite_diff_gradient,
    log_sum_exp,
    softmax,
    stable_sigmoid,
)
from .optim import OptimConfig, Trajectory, gradients, run_gradient_check, transduce

__version__ = "0.1.0"
