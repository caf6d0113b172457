"""Reading a trained model: pooled activations, useful filters, top phrases.

A filter is interpreted through the documents that excite it.  The pooled
matrix gives each document's max activation per filter; a filter whose
pooled range is below a threshold fires identically everywhere and carries
no signal.  For the filters that do vary, the highest-activation windows
across the corpus are the phrases the filter has learned to detect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .loss import activity_matrix, pearson_matrix
from .model import ModelParams, forward

PAD_TOKEN = "<pad>"
DEFAULT_USEFUL_THRESHOLD = 0.05


def pooled_matrix(
    params: ModelParams, corpus: Corpus, chunk: int = 128
) -> tuple[np.ndarray, np.ndarray]:
    """Per-document pooled activations and winning window positions.

    Returns (pooled, argmax), both (N, total_filters) in corpus order with
    layer blocks concatenated.  Processing is chunked so the transient
    window tensors stay small; a given chunk size is bit-reproducible, and
    different chunk sizes agree to within last-bit rounding.
    """
    pooled_parts, argmax_parts = [], []
    for lo in range(0, len(corpus), chunk):
        batch = [s.embeddings for s in corpus.samples[lo : lo + chunk]]
        trace = forward(params, batch)
        pooled_parts.append(trace.pooled)
        argmax_parts.append(np.concatenate([lt.argmax for lt in trace.layers], axis=1))
    if not pooled_parts:
        f_total = params.out_weight.shape[0]
        return np.zeros((0, f_total)), np.zeros((0, f_total), dtype=np.int64)
    return np.concatenate(pooled_parts), np.concatenate(argmax_parts)


def useful_filters(
    pooled: np.ndarray, threshold: float = DEFAULT_USEFUL_THRESHOLD
) -> np.ndarray:
    """Mask of filters whose pooled activation range reaches the threshold.

    Range is max - min over documents; the comparison is inclusive.  A
    constant filter (range 0) is never useful: it cannot separate anything.
    """
    spread = pooled.max(axis=0) - pooled.min(axis=0)
    return spread >= threshold


def binarize(pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Median-split each filter column into 0/1 treatments.

    Strictly above the column median maps to 1.  Returns (indicator
    matrix, per-column medians).
    """
    medians = np.median(pooled, axis=0)
    return (pooled > medians).astype(np.int64), medians


def correlation_grid(pooled: np.ndarray) -> np.ndarray:
    """Pearson correlations between all pooled filter columns."""
    return pearson_matrix(pooled)


def max_filter_correlation(pooled: np.ndarray, n_filters: int) -> float:
    """Largest positive within-layer correlation between distinct filters.

    Mirrors the training activity penalty, but measured on pooled
    per-document activations over a whole corpus.
    """
    f_total = pooled.shape[1]
    if f_total % n_filters:
        raise ValueError(f"{f_total} columns do not split into layers of {n_filters}")
    return max(
        float(activity_matrix(pooled[:, lo : lo + n_filters]).max())
        for lo in range(0, f_total, n_filters)
    )


# ---------------------------------------------------------------------------
# Phrase extraction


@dataclass(frozen=True)
class PhraseHit:
    """One window occurrence: where it was and how hard the filter fired."""

    sample_id: int
    position: int
    tokens: tuple[str, ...]
    activation: float


def _phrase_at(sample, position: int, kernel_size: int) -> tuple[str, ...]:
    toks = list(sample.tokens[position : position + kernel_size])
    while len(toks) < kernel_size:
        toks.append(PAD_TOKEN)  # document shorter than the kernel
    return tuple(toks)


def collect_top_phrases(
    params: ModelParams, corpus: Corpus, k: int = 10, chunk: int = 128
) -> list[list[PhraseHit]]:
    """Top-k phrase occurrences per filter, for every filter at once.

    Occurrences are ranked by activation, ties broken by (sample id,
    position) ascending.  Within each filter's top k, occurrences whose
    token sequences are identical are collapsed to the single
    highest-ranked one, so a list may come back shorter than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    f = params.kernels[0].shape[2]
    n_layers = len(params.kernels)
    candidates: list[list[tuple[float, int, int]]] = [
        [] for _ in range(n_layers * f)
    ]
    for lo in range(0, len(corpus), chunk):
        batch = corpus.samples[lo : lo + chunk]
        trace = forward(params, [s.embeddings for s in batch])
        ids = np.array([s.id for s in batch], dtype=np.int64)
        for l, lt in enumerate(trace.layers):
            sids = np.repeat(ids, lt.counts)
            pos = np.concatenate([np.arange(c) for c in lt.counts])
            for fi in range(f):
                act = lt.activations[:, fi]
                # lexsort: last key is primary, so this ranks by activation
                # descending, then sample id, then position.
                order = np.lexsort((pos, sids, -act))[:k]
                candidates[l * f + fi].extend(
                    (float(act[o]), int(sids[o]), int(pos[o])) for o in order
                )

    by_id = {s.id: s for s in corpus.samples}
    out: list[list[PhraseHit]] = []
    for glob, cand in enumerate(candidates):
        layer = glob // f
        k_size = params.kernels[layer].shape[0]
        ranked = sorted(cand, key=lambda t: (-t[0], t[1], t[2]))[:k]
        seen: set[tuple[str, ...]] = set()
        hits = []
        for act, sid, position in ranked:
            phrase = _phrase_at(by_id[sid], position, k_size)
            if phrase in seen:
                continue
            seen.add(phrase)
            hits.append(PhraseHit(sid, position, phrase, act))
        out.append(hits)
    return out


def top_phrases(
    params: ModelParams,
    corpus: Corpus,
    filter_index: int,
    k: int = 10,
    chunk: int = 128,
) -> list[PhraseHit]:
    """Top-k phrases for one filter (global index across layer blocks)."""
    return collect_top_phrases(params, corpus, k, chunk)[filter_index]


# ---------------------------------------------------------------------------
# Whole-model report


@dataclass
class FilterReport:
    filter_index: int  # global, across concatenated layer blocks
    layer: int
    within_layer: int
    kernel_size: int
    output_weight: float
    activation_range: float
    useful: bool
    phrases: list[PhraseHit]


def filter_reports(
    params: ModelParams,
    corpus: Corpus,
    threshold: float = DEFAULT_USEFUL_THRESHOLD,
    k: int = 10,
    include_all: bool = False,
    chunk: int = 128,
) -> list[FilterReport]:
    """One report per useful filter, heaviest output weight first.

    ``include_all`` keeps the below-threshold filters too (flagged not
    useful); ranking is by output weight descending, filter index breaking
    ties.
    """
    pooled, _ = pooled_matrix(params, corpus, chunk)
    mask = useful_filters(pooled, threshold)
    tops = collect_top_phrases(params, corpus, k, chunk)
    f = params.kernels[0].shape[2]
    reports = []
    for glob in range(len(tops)):
        if not include_all and not mask[glob]:
            continue
        layer = glob // f
        reports.append(
            FilterReport(
                filter_index=glob,
                layer=layer,
                within_layer=glob % f,
                kernel_size=int(params.kernels[layer].shape[0]),
                output_weight=float(params.out_weight[glob]),
                activation_range=float(pooled[:, glob].max() - pooled[:, glob].min()),
                useful=bool(mask[glob]),
                phrases=tops[glob],
            )
        )
    reports.sort(key=lambda r: (-r.output_weight, r.filter_index))
    return reports
