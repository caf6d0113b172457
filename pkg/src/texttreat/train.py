"""Seeded training loop, early stopping, and grid tuning by k-fold CV.

Optimization runs Adam over the flattened parameter vector.  A run is a
pure function of (corpus, configs, seed): the generator is consumed in a
fixed order (validation carve, then weight init, then one shuffle per
epoch), so repeating a run reproduces every parameter bit-for-bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .corpus import Corpus
from .interpret import max_filter_correlation, pooled_matrix, useful_filters
from .loss import (
    LossBreakdown,
    LossWeights,
    balanced_class_weights,
    compute_loss,
    compute_loss_and_grads,
    weighted_bce,
)
from .model import (
    ModelConfig,
    ModelParams,
    coordinate_names,
    flatten_params,
    forward,
    init_params,
    predict,
    unflatten_params,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainError(Exception):
    """Training cannot proceed with the given corpus and configuration."""


class InfeasibleModelError(TrainError):
    """A kernel is wider than every document the corpus can contain."""


class NonFiniteGradientError(TrainError):
    def __init__(self, index: int):
        super().__init__(f"non-finite gradient at flat coordinate {index}")
        self.index = index


@dataclass(frozen=True)
class TrainConfig:
    """Loop hyperparameters; ``seed`` pins the carve, init, and shuffles."""

    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 15
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size, patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


# ---------------------------------------------------------------------------
# Adam over flat vectors


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_adam(size: int) -> AdamState:
    return AdamState(m=np.zeros(size), v=np.zeros(size))


def adam_step(
    state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float
) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new theta."""
    if not np.isfinite(grad).all():
        raise NonFiniteGradientError(int(np.nonzero(~np.isfinite(grad))[0][0]))
    state.t += 1
    state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = state.m / (1.0 - ADAM_BETA1**state.t)
    v_hat = state.v / (1.0 - ADAM_BETA2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# The training loop


@dataclass
class EpochStats:
    epoch: int
    train_total: float
    train_bce: float
    train_conv_l2: float
    train_activity: float
    train_out_l1: float
    val_total: float
    val_bce: float
    val_accuracy: float


@dataclass
class TrainResult:
    params: ModelParams
    model_config: ModelConfig
    weights: LossWeights  # class_weights resolved to concrete numbers
    history: list[EpochStats]
    best_epoch: int
    stopped_early: bool
    train_indices: np.ndarray  # positions into the input corpus
    val_indices: np.ndarray


def train(
    corpus: Corpus,
    model_config: ModelConfig,
    weights: LossWeights,
    train_config: TrainConfig,
    callback=None,
) -> TrainResult:
    """Fit the model, early-stopping on validation total loss.

    A validation slice of round(val_fraction * N) samples is carved off by
    the seed before anything else.  When ``weights.class_weights`` is None,
    balanced weights are computed from the remaining training samples and
    used for both training and validation loss.  The best-validation
    parameters are restored at the end whether or not the patience window
    triggered.  ``callback``, if given, receives each EpochStats as it is
    produced.
    """
    if corpus.embedding_dim != model_config.embedding_dim:
        raise TrainError(
            f"corpus dim {corpus.embedding_dim} != model dim "
            f"{model_config.embedding_dim}"
        )
    if max(model_config.kernel_sizes) > corpus.max_tokens:
        raise InfeasibleModelError(
            f"kernel size {max(model_config.kernel_sizes)} exceeds the corpus "
            f"token budget {corpus.max_tokens}"
        )
    n = len(corpus)
    n_val = round(train_config.val_fraction * n)
    if n_val == 0 or n_val >= n:
        raise TrainError(
            f"val_fraction {train_config.val_fraction} of {n} samples leaves "
            f"an empty side"
        )

    rng = np.random.default_rng(train_config.seed)
    perm = rng.permutation(n)
    val_idx = np.sort(perm[:n_val])
    tr_idx = np.sort(perm[n_val:])
    tr_emb = [corpus.samples[i].embeddings for i in tr_idx]
    val_emb = [corpus.samples[i].embeddings for i in val_idx]
    y = corpus.outcomes()
    y_tr, y_val = y[tr_idx], y[val_idx]

    if weights.class_weights is None:
        weights = replace(weights, class_weights=balanced_class_weights(y_tr))

    params = init_params(model_config, rng)
    theta = flatten_params(params)
    adam = init_adam(theta.size)

    history: list[EpochStats] = []
    best_val = np.inf
    best_theta = theta.copy()
    best_epoch = 0
    wait = 0
    stopped_early = False
    n_tr = len(tr_idx)

    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n_tr)
        sums = np.zeros(5)  # total, bce, conv_l2, activity, out_l1
        for lo in range(0, n_tr, train_config.batch_size):
            idx = order[lo : lo + train_config.batch_size]
            params = unflatten_params(model_config, theta)
            trace = forward(params, [tr_emb[i] for i in idx])
            bd, grads = compute_loss_and_grads(params, trace, y_tr[idx], weights)
            try:
                theta = adam_step(
                    adam, theta, flatten_params(grads), train_config.learning_rate
                )
            except NonFiniteGradientError as e:
                name = coordinate_names(model_config)[e.index]
                raise TrainError(
                    f"non-finite gradient at {name} in epoch {epoch}"
                ) from e
            sums += len(idx) * np.array(
                [bd.total, bd.bce, bd.conv_l2, bd.activity, bd.out_l1]
            )
        sums /= n_tr  # sample-weighted mean over batches

        params = unflatten_params(model_config, theta)
        val_trace = forward(params, val_emb)
        val_bd: LossBreakdown = compute_loss(params, val_trace, y_val, weights)
        val_acc = float(((val_trace.probs > 0.5) == (y_val == 1.0)).mean())
        stats = EpochStats(
            epoch=epoch,
            train_total=float(sums[0]),
            train_bce=float(sums[1]),
            train_conv_l2=float(sums[2]),
            train_activity=float(sums[3]),
            train_out_l1=float(sums[4]),
            val_total=val_bd.total,
            val_bce=val_bd.bce,
            val_accuracy=val_acc,
        )
        history.append(stats)
        if callback is not None:
            callback(stats)

        if val_bd.total < best_val:  # strict improvement resets patience
            best_val = val_bd.total
            best_theta = theta.copy()
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= train_config.patience:
                stopped_early = True
                break

    return TrainResult(
        params=unflatten_params(model_config, best_theta),
        model_config=model_config,
        weights=weights,
        history=history,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
        train_indices=tr_idx,
        val_indices=val_idx,
    )


# ---------------------------------------------------------------------------
# Held-out evaluation


@dataclass
class Evaluation:
    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    bce: float


def evaluate_model(
    params: ModelParams,
    corpus: Corpus,
    class_weights: tuple[float, float] | None = None,
) -> Evaluation:
    """Threshold-0.5 classification metrics on a corpus.

    Precision, recall, and F1 are for the positive class, with the usual
    0/0 -> 0 convention when a denominator is empty.
    """
    probs = predict(params, [s.embeddings for s in corpus.samples])
    y = corpus.outcomes()
    pred = probs > 0.5
    actual = y == 1.0
    tp = int((pred & actual).sum())
    fp = int((pred & ~actual).sum())
    fn = int((~pred & actual).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Evaluation(
        n=len(corpus),
        accuracy=float((pred == actual).mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        bce=weighted_bce(probs, y, class_weights),
    )


# ---------------------------------------------------------------------------
# Grid tuning with k-fold cross-validation


@dataclass(frozen=True)
class Candidate:
    """One grid point: an architecture, penalty strengths, loop settings."""

    model: ModelConfig
    weights: LossWeights
    train: TrainConfig


@dataclass
class FoldStats:
    fold: int
    seed: int
    accuracy: float
    max_correlation: float
    n_useful: int
    composite: float


def kfold_indices(n: int, n_folds: int, seed: int) -> list[np.ndarray]:
    """Seeded unstratified partition into n_folds near-equal index sets."""
    if n_folds < 2 or n_folds > n:
        raise TrainError(f"cannot make {n_folds} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(fold) for fold in np.array_split(perm, n_folds)]


def _fold_score(
    result: TrainResult, held: Corpus, useful_threshold: float
) -> tuple[float, float, int, float]:
    pooled, _ = pooled_matrix(result.params, held)
    probs = expit(pooled @ result.params.out_weight + result.params.out_bias)
    accuracy = float(((probs > 0.5) == (held.outcomes() == 1.0)).mean())
    max_corr = max_filter_correlation(pooled, result.model_config.n_filters)
    n_useful = int(useful_filters(pooled, useful_threshold).sum())
    composite = (
        accuracy
        - 0.25 * max_corr
        + 0.25 * n_useful / result.model_config.total_filters
    )
    return accuracy, max_corr, n_useful, composite


def cross_validate(
    corpus: Corpus,
    candidate: Candidate,
    n_folds: int = 5,
    seed: int = 0,
    candidate_index: int = 0,
    useful_threshold: float = 0.05,
) -> list[FoldStats]:
    """Train on each fold complement, score on the held-out fold.

    Scores per fold: held-out accuracy, the largest positive inter-filter
    correlation of pooled activations within any layer, and how many
    filters pass the usefulness threshold.  The composite is
    accuracy - 0.25 * correlation + 0.25 * useful_fraction, rewarding
    separated, non-degenerate filters on top of raw fit.

    Every fold derives its own training seed from (seed, candidate_index,
    fold), so grid cells never share initialization by accident.
    """
    folds = kfold_indices(len(corpus), n_folds, seed)
    out = []
    for j, hold in enumerate(folds):
        rest = np.sort(
            np.concatenate([folds[i] for i in range(n_folds) if i != j])
        )
        child = int(
            np.random.SeedSequence([seed, candidate_index, j]).generate_state(1)[0]
        )
        result = train(
            corpus.subset(rest),
            candidate.model,
            candidate.weights,
            replace(candidate.train, seed=child),
        )
        held = corpus.subset(hold)
        accuracy, max_corr, n_useful, composite = _fold_score(
            result, held, useful_threshold
        )
        out.append(FoldStats(j, child, accuracy, max_corr, n_useful, composite))
    return out


@dataclass
class CandidateResult:
    index: int
    candidate: Candidate
    folds: list[FoldStats]
    accuracy: float
    max_correlation: float
    n_useful: float
    composite: float
    error: str | None


@dataclass
class TuneResult:
    rows: list[CandidateResult]
    best_index: int


def tune(
    corpus: Corpus,
    candidates: list[Candidate],
    n_folds: int = 5,
    seed: int = 0,
    useful_threshold: float = 0.05,
    threads: int = 1,
) -> TuneResult:
    """Cross-validate every candidate; best = highest mean composite.

    Candidates that cannot run (kernel wider than the corpus, single-class
    folds) become failed rows with the error message, never a crash.  With
    ``threads`` > 1 candidates run in a thread pool; results are reduced in
    candidate order, so the outcome is identical to a serial run.
    """

    def run(i: int) -> CandidateResult:
        cand = candidates[i]
        try:
            folds = cross_validate(
                corpus, cand, n_folds, seed, i, useful_threshold
            )
        except (TrainError, ValueError) as e:
            return CandidateResult(
                i, cand, [], float("nan"), float("nan"), float("nan"),
                float("nan"), str(e),
            )
        return CandidateResult(
            index=i,
            candidate=cand,
            folds=folds,
            accuracy=float(np.mean([f.accuracy for f in folds])),
            max_correlation=float(np.mean([f.max_correlation for f in folds])),
            n_useful=float(np.mean([f.n_useful for f in folds])),
            composite=float(np.mean([f.composite for f in folds])),
            error=None,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, range(len(candidates))))
    else:
        rows = [run(i) for i in range(len(candidates))]

    best_index = -1
    best = -np.inf
    for row in rows:
        if row.error is None and row.composite > best:
            best = row.composite
            best_index = row.index
    if best_index < 0:
        raise TrainError("every tuning candidate failed")
    return TuneResult(rows=rows, best_index=best_index)
