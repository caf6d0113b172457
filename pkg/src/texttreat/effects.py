"""Effect estimation on discovered treatments, with bootstrap uncertainty.

Useful filters become binary document-level treatments by a median split
of their pooled activations; a linear regression of outcomes on those
treatments gives marginal effect estimates.  Uncertainty comes from two
resampling schemes: holding the trained model fixed and refitting only the
regression per resample, or retraining the whole model per resample.  The
retrain scheme reports only aggregate metrics, because filters from
different training runs do not line up coefficient-for-coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.special import expit

from .corpus import Corpus, Sample
from .interpret import (
    DEFAULT_USEFUL_THRESHOLD,
    binarize,
    max_filter_correlation,
    pooled_matrix,
    useful_filters,
)
from .loss import pearson_matrix
from .model import ModelParams

NEAR_DUPLICATE_CORRELATION = 0.999


class EffectsError(Exception):
    """Effect estimation cannot proceed on the given inputs."""


class RankDeficiencyError(EffectsError):
    """The regression design matrix does not have full column rank."""

    def __init__(self, message: str, columns: list[str]):
        super().__init__(message)
        self.columns = columns


def _column_label(design_index: int) -> str:
    return "intercept" if design_index == 0 else f"treatment {design_index - 1}"


@dataclass
class OLSFit:
    """Least-squares fit of outcomes on treatments plus an intercept."""

    coefficients: np.ndarray  # (m,), aligned with treatment columns
    intercept: float
    r2: float
    adjusted_r2: float
    n: int
    m: int


def ols_fit(treatments: np.ndarray, outcomes: np.ndarray) -> OLSFit:
    """Fit y ~ intercept + Z by QR with column pivoting.

    Refuses a rank-deficient design and names the dependent columns.
    Conventions: a constant outcome gives r2 = 0; adjusted r2 is NaN when
    n - m - 1 <= 0 (no residual degrees of freedom).
    """
    z = np.asarray(treatments, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if z.ndim != 2:
        raise EffectsError(f"treatments must be 2-d, got shape {z.shape}")
    n, m = z.shape
    if y.shape != (n,):
        raise EffectsError(f"outcomes shape {y.shape} does not match {n} rows")
    if n < m + 1:
        raise EffectsError(f"{n} rows cannot identify {m + 1} parameters")

    x = np.column_stack([np.ones(n), z])
    q, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, m + 1) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < m + 1:
        dependent = [_column_label(int(j)) for j in piv[rank:]]
        raise RankDeficiencyError(
            f"design matrix rank {rank} < {m + 1}; dependent columns: "
            + ", ".join(dependent),
            columns=dependent,
        )
    coef_pivoted = scipy.linalg.solve_triangular(r, q.T @ y)
    beta = np.empty(m + 1)
    beta[piv] = coef_pivoted

    residuals = y - x @ beta
    ssr = float(residuals @ residuals)
    sst = float(((y - y.mean()) ** 2).sum())
    r2 = 0.0 if sst == 0.0 else 1.0 - ssr / sst
    dof = n - m - 1
    adjusted = 1.0 - (1.0 - r2) * (n - 1) / dof if dof > 0 else float("nan")
    return OLSFit(
        coefficients=beta[1:],
        intercept=float(beta[0]),
        r2=r2,
        adjusted_r2=adjusted,
        n=n,
        m=m,
    )


def predict_ols(fit: OLSFit, treatments: np.ndarray) -> np.ndarray:
    z = np.asarray(treatments, dtype=np.float64)
    return fit.intercept + z @ fit.coefficients


def oos_mse(fit: OLSFit, treatments: np.ndarray, outcomes: np.ndarray) -> float:
    """Mean squared error of a previously-fit regression on new rows."""
    resid = np.asarray(outcomes, dtype=np.float64) - predict_ols(fit, treatments)
    return float((resid * resid).mean())


@dataclass
class CollinearityReport:
    full_rank: bool
    rank: int
    n_columns: int  # includes the intercept
    near_duplicate_pairs: list[tuple[int, int, float]]


def collinearity_check(treatments: np.ndarray) -> CollinearityReport:
    """Numerical rank of [1, Z] plus treatment pairs correlated past 0.999."""
    z = np.asarray(treatments, dtype=np.float64)
    n, m = z.shape
    x = np.column_stack([np.ones(n), z])
    s = scipy.linalg.svd(x, compute_uv=False)
    tol = max(n, m + 1) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int((s > tol).sum())
    cors = pearson_matrix(z)
    pairs = [
        (i, j, float(cors[i, j]))
        for i in range(m)
        for j in range(i + 1, m)
        if abs(cors[i, j]) > NEAR_DUPLICATE_CORRELATION
    ]
    return CollinearityReport(
        full_rank=rank == m + 1,
        rank=rank,
        n_columns=m + 1,
        near_duplicate_pairs=pairs,
    )


# ---------------------------------------------------------------------------
# Treatments from a trained model


@dataclass
class EffectEstimate:
    filter_indices: np.ndarray  # global filter index per treatment column
    medians: np.ndarray  # binarization cut per treatment column
    treatments: np.ndarray  # (N, m) binary
    fit: OLSFit
    collinearity: CollinearityReport


def treatment_matrix(
    params: ModelParams,
    corpus: Corpus,
    threshold: float = DEFAULT_USEFUL_THRESHOLD,
    chunk: int = 128,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary treatments from the useful filters: (Z, filter_indices, medians)."""
    pooled, _ = pooled_matrix(params, corpus, chunk)
    mask = useful_filters(pooled, threshold)
    if not mask.any():
        raise EffectsError(f"no filter reaches the usefulness threshold {threshold}")
    z, medians = binarize(pooled[:, mask])
    return z, np.nonzero(mask)[0], medians


def estimate_effects(
    params: ModelParams,
    corpus: Corpus,
    threshold: float = DEFAULT_USEFUL_THRESHOLD,
    chunk: int = 128,
) -> EffectEstimate:
    """Point estimates of each useful filter's effect on the outcome."""
    z, idx, medians = treatment_matrix(params, corpus, threshold, chunk)
    fit = ols_fit(z, corpus.outcomes())
    return EffectEstimate(
        filter_indices=idx,
        medians=medians,
        treatments=z,
        fit=fit,
        collinearity=collinearity_check(z),
    )


# ---------------------------------------------------------------------------
# Bootstrap, model held fixed


@dataclass
class BootstrapResult:
    point: OLSFit
    coef_low: np.ndarray  # 2.5th percentile per treatment coefficient
    coef_high: np.ndarray  # 97.5th percentile
    intercept_low: float
    intercept_high: float
    n_resamples: int
    n_failed: int
    coef_draws: np.ndarray  # (successful resamples, m)
    intercept_draws: np.ndarray


def bootstrap_ols(
    treatments: np.ndarray,
    outcomes: np.ndarray,
    n_boot: int = 1000,
    seed: int = 0,
    resample_indices=None,
) -> BootstrapResult:
    """Percentile-bootstrap the regression coefficients.

    Resample b draws its row indices from a generator seeded by [seed, b],
    so any single resample can be reproduced in isolation.  Resamples whose
    design goes rank-deficient (a treatment constant within the resample)
    are dropped and counted, not imputed.  ``resample_indices`` replaces
    the index draw with resample_indices(b, n) for testing.
    """
    if n_boot < 1:
        raise EffectsError("n_boot must be >= 1")
    z = np.asarray(treatments, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    point = ols_fit(z, y)
    n = z.shape[0]
    coef_draws, intercept_draws = [], []
    n_failed = 0
    for b in range(n_boot):
        if resample_indices is not None:
            idx = np.asarray(resample_indices(b, n))
        else:
            idx = np.random.default_rng([seed, b]).integers(0, n, n)
        try:
            fit = ols_fit(z[idx], y[idx])
        except EffectsError:
            n_failed += 1
            continue
        coef_draws.append(fit.coefficients)
        intercept_draws.append(fit.intercept)
    if not coef_draws:
        raise EffectsError(f"all {n_boot} bootstrap resamples were rank-deficient")
    coefs = np.array(coef_draws)
    intercepts = np.array(intercept_draws)
    coef_lo, coef_hi = np.percentile(coefs, [2.5, 97.5], axis=0)
    int_lo, int_hi = np.percentile(intercepts, [2.5, 97.5])
    return BootstrapResult(
        point=point,
        coef_low=coef_lo,
        coef_high=coef_hi,
        intercept_low=float(int_lo),
        intercept_high=float(int_hi),
        n_resamples=n_boot,
        n_failed=n_failed,
        coef_draws=coefs,
        intercept_draws=intercepts,
    )


@dataclass
class FixedBootstrap:
    estimate: EffectEstimate
    boot: BootstrapResult


def bootstrap_fixed(
    params: ModelParams,
    corpus: Corpus,
    threshold: float = DEFAULT_USEFUL_THRESHOLD,
    n_boot: int = 1000,
    seed: int = 0,
    chunk: int = 128,
    resample_indices=None,
) -> FixedBootstrap:
    """Effect intervals with the trained model held fixed.

    Treatments are computed once from the full corpus; only document rows
    are resampled.  This prices in sampling noise of the regression, not of
    the filter discovery itself (see ``bootstrap_retrain`` for that).
    """
    estimate = estimate_effects(params, corpus, threshold, chunk)
    boot = bootstrap_ols(
        estimate.treatments, corpus.outcomes(), n_boot, seed, resample_indices
    )
    return FixedBootstrap(estimate=estimate, boot=boot)


# ---------------------------------------------------------------------------
# Bootstrap with retraining


@dataclass
class RetrainRow:
    resample: int
    accuracy: float
    n_useful: int
    max_correlation: float


@dataclass
class RetrainBootstrap:
    rows: list[RetrainRow]
    accuracy_mean: float
    accuracy_low: float  # 2.5th percentile
    accuracy_high: float  # 97.5th percentile
    n_resamples: int
    n_failed: int


def _resample_corpus(corpus: Corpus, idx: np.ndarray) -> Corpus:
    # Bootstrap rows repeat, so sample ids are renumbered positionally to
    # keep the uniqueness invariant; embeddings are shared, not copied.
    samples = []
    for new_id, i in enumerate(idx):
        s = corpus.samples[int(i)]
        samples.append(
            Sample(
                id=new_id,
                tokens=s.tokens,
                embeddings=s.embeddings,
                outcome=s.outcome,
                raw_text=s.raw_text,
            )
        )
    return Corpus(
        samples=samples,
        embedding_dim=corpus.embedding_dim,
        max_tokens=corpus.max_tokens,
        provenance=corpus.provenance,
    )


def bootstrap_retrain(
    train_corpus: Corpus,
    test_corpus: Corpus,
    model_config,
    weights,
    train_config,
    n_boot: int = 150,
    seed: int = 0,
    useful_threshold: float = DEFAULT_USEFUL_THRESHOLD,
    resample_indices=None,
) -> RetrainBootstrap:
    """Retrain the whole model on each resample of the training corpus.

    Each resample reports held-out accuracy on the fixed test corpus, its
    useful-filter count, and its worst within-layer filter correlation.
    No per-coefficient intervals are produced: filters from independent
    runs are not the same objects, so their coefficients do not align.
    Resample b derives an index seed and a fresh training seed from
    (seed, b); failed runs are dropped and counted.
    """
    from .train import TrainError, train as train_fn

    if n_boot < 1:
        raise EffectsError("n_boot must be >= 1")
    n = len(train_corpus)
    rows: list[RetrainRow] = []
    n_failed = 0
    y_test = test_corpus.outcomes()
    for b in range(n_boot):
        state = np.random.SeedSequence([seed, b]).generate_state(2)
        if resample_indices is not None:
            idx = np.asarray(resample_indices(b, n))
        else:
            idx = np.random.default_rng(int(state[0])).integers(0, n, n)
        resampled = _resample_corpus(train_corpus, idx)
        cfg = replace(train_config, seed=int(state[1]))
        try:
            result = train_fn(resampled, model_config, weights, cfg)
        except (TrainError, ValueError):
            n_failed += 1
            continue
        pooled, _ = pooled_matrix(result.params, test_corpus)
        probs = expit(pooled @ result.params.out_weight + result.params.out_bias)
        accuracy = float(((probs > 0.5) == (y_test == 1.0)).mean())
        rows.append(
            RetrainRow(
                resample=b,
                accuracy=accuracy,
                n_useful=int(useful_filters(pooled, useful_threshold).sum()),
                max_correlation=max_filter_correlation(
                    pooled, model_config.n_filters
                ),
            )
        )
    if not rows:
        raise EffectsError(f"all {n_boot} retraining resamples failed")
    accs = np.array([r.accuracy for r in rows])
    lo, hi = np.percentile(accs, [2.5, 97.5])
    return RetrainBootstrap(
        rows=rows,
        accuracy_mean=float(accs.mean()),
        accuracy_low=float(lo),
        accuracy_high=float(hi),
        n_resamples=n_boot,
        n_failed=n_failed,
    )
