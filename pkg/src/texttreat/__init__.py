"""Discover influential phrase features in text and estimate their effects.

The pipeline: documents arrive as per-token contextual embeddings (the
EMBT container), a small convolutional model learns filters that respond
to outcome-relevant phrases, penalties keep the filters sparse and
mutually decorrelated, pooled filter activations become binary
document-level treatments, and a bootstrapped regression prices each
treatment's effect on the outcome.  An L1-penalized n-gram logistic
regression is included as the transparent benchmark, and a synthetic
corpus generator provides ground truth to validate the whole chain.
"""

__version__ = "0.1.0"

from .corpus import (
    BadMagicError,
    Corpus,
    CorpusError,
    InvariantError,
    NonFiniteEmbeddingError,
    PlantedPattern,
    Sample,
    SplitError,
    SplitSpec,
    SyntheticSpec,
    TruncatedCorpusError,
    VersionMismatchError,
    corpora_equal,
    generate_synthetic,
    read_corpus,
    split,
    token_base_vector,
    write_corpus,
)
from .effects import (
    BootstrapResult,
    CollinearityReport,
    EffectEstimate,
    EffectsError,
    FixedBootstrap,
    OLSFit,
    RankDeficiencyError,
    RetrainBootstrap,
    bootstrap_fixed,
    bootstrap_ols,
    bootstrap_retrain,
    collinearity_check,
    estimate_effects,
    ols_fit,
    oos_mse,
    predict_ols,
    treatment_matrix,
)
from .interpret import (
    FilterReport,
    PhraseHit,
    binarize,
    collect_top_phrases,
    correlation_grid,
    filter_reports,
    max_filter_correlation,
    pooled_matrix,
    top_phrases,
    useful_filters,
)
from .loss import (
    GradCheckReport,
    LossBreakdown,
    LossWeights,
    activity_matrix,
    balanced_class_weights,
    compute_loss,
    compute_loss_and_grads,
    fd_check,
    pearson_matrix,
    weighted_bce,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelFormatError,
    ModelParams,
    ModelVersionError,
    coordinate_names,
    flatten_params,
    forward,
    init_params,
    load_model,
    param_layout,
    predict,
    save_model,
    unflatten_params,
)
from .rlr import (
    L1LogisticFit,
    RLRError,
    RLRReport,
    build_vocab,
    featurize,
    fit_l1_logistic,
    lambda_max,
    rlr_report,
    select_lambda,
)
from .train import (
    AdamState,
    Candidate,
    Evaluation,
    InfeasibleModelError,
    TrainConfig,
    TrainError,
    TrainResult,
    adam_step,
    cross_validate,
    evaluate_model,
    init_adam,
    kfold_indices,
    train,
    tune,
)
