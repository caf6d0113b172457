"""Benchmark: L1-regularized logistic regression on n-gram counts.

This is the transparent baseline the convolutional pipeline is compared
against.  Documents become bag-of-n-gram count vectors over a
frequency-thresholded, stopword-filtered vocabulary; an L1 penalty prunes
the grams; the penalty strength is chosen by bisection so at most a fixed
number of grams survive; and the surviving counts are fed to the same OLS
effect report the filter treatments use.

The solver is proximal gradient descent with backtracking.  Soft
thresholding produces exact zeros, so "selected" means literally nonzero.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.special import expit

from .corpus import Corpus
from .effects import OLSFit, ols_fit

SEPARATION_BOUND = 1e3


class RLRError(Exception):
    """The benchmark cannot run on the given corpus or settings."""


def load_default_stopwords() -> frozenset[str]:
    """Bundled English and Chinese stopword lists, merged."""
    words: set[str] = set()
    data = resources.files("texttreat") / "data"
    for name in ("stopwords_en.txt", "stopwords_zh.txt"):
        text = (data / name).read_text(encoding="utf-8")
        words.update(w.strip() for w in text.splitlines() if w.strip())
    return frozenset(words)


def _grams(tokens, sizes, stopwords):
    # A gram containing any stopword (case-insensitive) is skipped whole.
    for k in sizes:
        for t in range(len(tokens) - k + 1):
            gram = tokens[t : t + k]
            if any(w.lower() in stopwords for w in gram):
                continue
            yield tuple(gram)


def build_vocab(
    corpus: Corpus,
    gram_sizes: tuple[int, ...] = (1, 2, 3),
    min_count: int = 5,
    stopwords: frozenset[str] | None = None,
) -> list[tuple[str, ...]]:
    """Contiguous n-grams occurring at least min_count times corpus-wide.

    Ordered by frequency descending, ties lexicographic, so the vocabulary
    (and everything downstream of it) is reproducible.
    """
    if stopwords is None:
        stopwords = load_default_stopwords()
    if not gram_sizes or any(k < 1 for k in gram_sizes):
        raise RLRError(f"bad gram sizes {gram_sizes}")
    counts: Counter = Counter()
    for s in corpus.samples:
        counts.update(_grams(s.tokens, gram_sizes, stopwords))
    kept = [(g, c) for g, c in counts.items() if c >= min_count]
    kept.sort(key=lambda gc: (-gc[1], gc[0]))
    return [g for g, _ in kept]


def featurize(corpus: Corpus, vocab: list[tuple[str, ...]]) -> np.ndarray:
    """Occurrence-count matrix (N x |vocab|), overlapping matches included."""
    index = {g: j for j, g in enumerate(vocab)}
    sizes = tuple(sorted({len(g) for g in vocab}))
    x = np.zeros((len(corpus), len(vocab)))
    for i, s in enumerate(corpus.samples):
        for gram in _grams(s.tokens, sizes, frozenset()):
            j = index.get(gram)
            if j is not None:
                x[i, j] += 1.0
    return x


# ---------------------------------------------------------------------------
# Proximal gradient solver


@dataclass
class L1LogisticFit:
    weights: np.ndarray
    intercept: float
    lam: float
    objective: float  # mean NLL + lam * ||w||_1
    n_iter: int
    converged: bool
    separated: bool  # a weight ran past the divergence bound


def _mean_nll(z: np.ndarray, y: np.ndarray) -> float:
    # softplus(z) - y*z, numerically stable at both tails.
    return float((np.logaddexp(0.0, z) - y * z).mean())


def _soft(u: np.ndarray, t: float) -> np.ndarray:
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def fit_l1_logistic(
    x: np.ndarray,
    y: np.ndarray,
    lam: float,
    max_iter: int = 10000,
    tol: float = 1e-9,
) -> L1LogisticFit:
    """Minimize mean NLL + lam * ||w||_1 (intercept unpenalized).

    Proximal gradient with backtracking: the step halves until the smooth
    part satisfies its quadratic majorization, and is allowed to double
    again on the next iteration.  Stops when the objective decrease falls
    below ``tol``, the iteration budget runs out, or a weight escapes past
    the separation bound (near-separable data under a too-small penalty).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise RLRError("lam must be >= 0")
    n, v = x.shape
    w = np.zeros(v)
    b = 0.0
    step = 1.0
    z = np.zeros(n)
    obj = _mean_nll(z, y) + 0.0
    converged = False
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(z)
        g_w = x.T @ (p - y) / n
        g_b = float((p - y).mean())
        f0 = _mean_nll(z, y)
        step = min(step * 2.0, 1e12)
        while True:
            w_new = _soft(w - step * g_w, step * lam)
            b_new = b - step * g_b
            z_new = x @ w_new + b_new
            f_new = _mean_nll(z_new, y)
            dw = w_new - w
            db = b_new - b
            bound = f0 + g_w @ dw + g_b * db + (dw @ dw + db * db) / (2.0 * step)
            if f_new <= bound + 1e-15 or step < 1e-20:
                break
            step *= 0.5
        w, b, z = w_new, b_new, z_new
        new_obj = f_new + lam * float(np.abs(w).sum())
        if np.abs(w).max(initial=0.0) > SEPARATION_BOUND:
            separated = True
            obj = new_obj
            break
        if obj - new_obj < tol:
            converged = True
            obj = new_obj
            break
        obj = new_obj
    return L1LogisticFit(
        weights=w,
        intercept=b,
        lam=lam,
        objective=obj,
        n_iter=it,
        converged=converged,
        separated=separated,
    )


def lambda_max(x: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty that keeps every weight at zero.

    At w = 0 with the intercept at its optimum, the smooth gradient is
    X^T (ybar - y) / N; the penalty must dominate its largest entry.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.abs(x.T @ (y - y.mean())).max() / len(y))


def select_lambda(
    x: np.ndarray,
    y: np.ndarray,
    max_selected: int = 16,
    max_iter: int = 10000,
    tol: float = 1e-9,
) -> tuple[float, L1LogisticFit]:
    """Bisect for the weakest penalty keeping at most max_selected grams.

    The upper end starts at lambda_max (zero grams, always admissible) and
    the search halves the bracket until it is within 1e-3 * lambda_max,
    returning the admissible endpoint and its fit.  Weaker penalties admit
    more grams, so this maximizes what the cap allows.
    """
    if max_selected < 1:
        raise RLRError("max_selected must be >= 1")
    if len(set(np.asarray(y).tolist())) < 2:
        raise RLRError("outcomes are constant; nothing to fit")
    lam_hi = lambda_max(x, y)
    if lam_hi <= 0:
        raise RLRError("every gram count is orthogonal to the outcome")
    fit_hi = fit_l1_logistic(x, y, lam_hi, max_iter, tol)
    if int((fit_hi.weights != 0).sum()) > max_selected:
        raise RLRError("selection cap violated even at lambda_max")
    lo = 0.0
    hi = lam_hi
    while hi - lo > 1e-3 * lam_hi:
        mid = (lo + hi) / 2.0
        fit_mid = fit_l1_logistic(x, y, mid, max_iter, tol)
        if int((fit_mid.weights != 0).sum()) <= max_selected:
            hi, fit_hi = mid, fit_mid
        else:
            lo = mid
    return hi, fit_hi


# ---------------------------------------------------------------------------
# Full benchmark report


@dataclass
class SelectedGram:
    gram: tuple[str, ...]
    weight: float  # logistic weight at the selected penalty
    corpus_count: int


@dataclass
class RLRReport:
    vocab_size: int
    lam: float
    logistic: L1LogisticFit
    selected: list[SelectedGram]  # by |weight| descending
    survivors: list[tuple[str, ...]]  # selected minus exact collinears, vocab order
    dropped: list[tuple[str, ...]]
    ols: OLSFit  # outcomes on survivor counts
    accuracy: float  # logistic training accuracy at 0.5


def _drop_exact_collinear(x_sel: np.ndarray) -> tuple[list[int], list[int]]:
    """Greedy scan keeping columns that grow the design's rank.

    Scan order is vocabulary order (frequency descending), so when two
    grams carry identical counts the commoner one survives.  "Exact" is up
    to a 1e-8 relative residual after projecting onto the kept columns and
    the intercept.
    """
    n = x_sel.shape[0]
    basis = np.ones((n, 1))
    keep, drop = [], []
    for j in range(x_sel.shape[1]):
        col = x_sel[:, j]
        coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
        resid = col - basis @ coef
        if np.linalg.norm(resid) > 1e-8 * max(1.0, np.linalg.norm(col)):
            keep.append(j)
            basis = np.column_stack([basis, col])
        else:
            drop.append(j)
    return keep, drop


def rlr_report(
    corpus: Corpus,
    gram_sizes: tuple[int, ...] = (1, 2, 3),
    min_count: int = 5,
    max_selected: int = 16,
    stopwords: frozenset[str] | None = None,
    max_iter: int = 10000,
    tol: float = 1e-9,
) -> RLRReport:
    """Run the whole benchmark: vocabulary, penalty path, effect estimates.

    Grams selected by the logistic model but exactly collinear with
    earlier-selected ones (duplicated count columns) are dropped before the
    OLS step, which would otherwise refuse the design.
    """
    vocab = build_vocab(corpus, gram_sizes, min_count, stopwords)
    if not vocab:
        raise RLRError(
            f"no gram of sizes {gram_sizes} reaches min_count={min_count}"
        )
    x = featurize(corpus, vocab)
    y = corpus.outcomes()
    lam, fit = select_lambda(x, y, max_selected, max_iter, tol)

    counts = x.sum(axis=0)
    sel_idx = [j for j in range(len(vocab)) if fit.weights[j] != 0.0]
    selected = [
        SelectedGram(vocab[j], float(fit.weights[j]), int(counts[j]))
        for j in sel_idx
    ]
    selected.sort(key=lambda s: (-abs(s.weight), s.gram))

    keep_local, drop_local = _drop_exact_collinear(x[:, sel_idx])
    survivors = [vocab[sel_idx[j]] for j in keep_local]
    dropped = [vocab[sel_idx[j]] for j in drop_local]
    if not survivors:
        raise RLRError("the penalty selected no grams; lower min_count or the cap")
    ols = ols_fit(x[:, [sel_idx[j] for j in keep_local]], y)

    probs = expit(x @ fit.weights + fit.intercept)
    accuracy = float(((probs > 0.5) == (y == 1.0)).mean())
    return RLRReport(
        vocab_size=len(vocab),
        lam=lam,
        logistic=fit,
        selected=selected,
        survivors=survivors,
        dropped=dropped,
        ols=ols,
        accuracy=accuracy,
    )
