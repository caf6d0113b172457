"""Convolutional scoring model over per-token embedding sequences.

One or more 1-d convolutional layers slide across a document's token
embeddings; layer l has its own kernel width and all layers share a filter
count F.  Each filter's sigmoid activations are max-pooled over the
document's windows (recording which window won), the pooled values from
all layers are concatenated, and a dense sigmoid unit with bias maps them
to an outcome probability.

Parameters are float64.  Embeddings arrive float32 and are promoted on
entry.  A forward trace keeps the window tensors and per-window
activations that backpropagation and the activity penalty consume, so run
full corpora through in chunks (see ``predict``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

MODEL_FORMAT = "texttreat-model"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(Exception):
    """A checkpoint file is not a recognizable saved model."""


class ModelVersionError(ModelFormatError):
    """A checkpoint declares a format version this loader does not speak."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture: kernel width per conv layer, shared filter count, input dim."""

    kernel_sizes: tuple[int, ...]
    n_filters: int
    embedding_dim: int

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(self.kernel_sizes))
        if len(self.kernel_sizes) == 0:
            raise ValueError("need at least one convolutional layer")
        if any(k < 1 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be >= 1, got {self.kernel_sizes}")
        if self.n_filters < 1 or self.embedding_dim < 1:
            raise ValueError("n_filters and embedding_dim must be >= 1")

    @property
    def n_layers(self) -> int:
        return len(self.kernel_sizes)

    @property
    def total_filters(self) -> int:
        return self.n_layers * self.n_filters


@dataclass
class ModelParams:
    """All trainable tensors.  kernels[l] is (K_l, D, F); biases[l] is (F,)."""

    kernels: list[np.ndarray]
    biases: list[np.ndarray]
    out_weight: np.ndarray
    out_bias: float


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Scaled-uniform weight init, zero biases.

    Each weight tensor draws uniformly from +-sqrt(6 / (fan_in + fan_out)):
    conv layers use fan_in = K*D and fan_out = F, the output unit uses
    fan_in = total_filters and fan_out = 1.  Layers consume the generator
    in declaration order, then the output weights.
    """
    kernels, biases = [], []
    for k in config.kernel_sizes:
        limit = np.sqrt(6.0 / (k * config.embedding_dim + config.n_filters))
        kernels.append(
            rng.uniform(-limit, limit, (k, config.embedding_dim, config.n_filters))
        )
        biases.append(np.zeros(config.n_filters))
    limit = np.sqrt(6.0 / (config.total_filters + 1))
    out_weight = rng.uniform(-limit, limit, config.total_filters)
    return ModelParams(kernels, biases, out_weight, 0.0)


# ---------------------------------------------------------------------------
# Forward pass


@dataclass
class LayerTrace:
    """Per-layer forward state for one batch.

    ``windows`` stacks every sliding window of every sample: sample i owns
    rows starts[i] .. starts[i]+counts[i].  ``argmax`` holds, per sample and
    filter, the window position that won the max-pool (first position on
    ties).
    """

    windows: np.ndarray  # (total_windows, K, D)
    activations: np.ndarray  # (total_windows, F)
    starts: np.ndarray  # (n_samples,)
    counts: np.ndarray  # (n_samples,)
    pooled: np.ndarray  # (n_samples, F)
    argmax: np.ndarray  # (n_samples, F)


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]
    pooled: np.ndarray  # (n_samples, total_filters), layer blocks concatenated
    logits: np.ndarray  # (n_samples,)
    probs: np.ndarray  # (n_samples,)


def _sample_windows(emb: np.ndarray, k: int) -> np.ndarray:
    """All width-k windows of one document, zero-padded right if it is short."""
    u = emb.shape[0]
    if u < k:
        emb = np.vstack([emb, np.zeros((k - u, emb.shape[1]))])
    view = np.lib.stride_tricks.sliding_window_view(emb, k, axis=0)
    return view.transpose(0, 2, 1)  # (P, K, D)


def forward(params: ModelParams, embeddings: Sequence[np.ndarray]) -> ForwardTrace:
    """Run a batch of documents through the model.

    ``embeddings`` is a sequence of (U_i, D) arrays; any float dtype is
    promoted to float64.  Returns the full trace needed for gradients.
    """
    emb64 = [np.asarray(e, dtype=np.float64) for e in embeddings]
    n = len(emb64)
    layers = []
    for kern, bias in zip(params.kernels, params.biases):
        k = kern.shape[0]
        per_sample = [_sample_windows(e, k) for e in emb64]
        counts = np.array([w.shape[0] for w in per_sample], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts[:-1])]).astype(np.int64)
        windows = (
            np.concatenate(per_sample)
            if per_sample
            else np.zeros((0, k, kern.shape[1]))
        )
        act = expit(np.einsum("pkd,kdf->pf", windows, kern, optimize=True) + bias)
        f = kern.shape[2]
        pooled = np.empty((n, f))
        argmax = np.empty((n, f), dtype=np.int64)
        for i in range(n):
            seg = act[starts[i] : starts[i] + counts[i]]
            argmax[i] = np.argmax(seg, axis=0)  # first position wins ties
            pooled[i] = seg[argmax[i], np.arange(f)]
        layers.append(LayerTrace(windows, act, starts, counts, pooled, argmax))
    pooled_all = (
        np.concatenate([lt.pooled for lt in layers], axis=1)
        if n
        else np.zeros((0, params.out_weight.shape[0]))
    )
    logits = pooled_all @ params.out_weight + params.out_bias
    probs = expit(logits)
    return ForwardTrace(layers, pooled_all, logits, probs)


def predict(
    params: ModelParams, embeddings: Sequence[np.ndarray], chunk: int = 128
) -> np.ndarray:
    """Outcome probabilities for many documents, processed in chunks.

    Chunking bounds the window tensors a trace retains.  For a fixed chunk
    size results are bit-reproducible; different chunk sizes can disagree
    in the last bit, because the window batch shape steers the BLAS
    summation order.
    """
    parts = []
    for lo in range(0, len(embeddings), chunk):
        parts.append(forward(params, embeddings[lo : lo + chunk]).probs)
    return np.concatenate(parts) if parts else np.zeros(0)


# ---------------------------------------------------------------------------
# Flat parameter vector


@dataclass(frozen=True)
class ParamLayout:
    """Slices into the canonical flat parameter vector.

    Order: per layer (kernel row-major, then bias), then output weights,
    then the output bias as the final coordinate.  Every consumer of flat
    vectors (the optimizer, gradient checks, tie flagging) shares this
    layout.
    """

    kernel: tuple[slice, ...]
    bias: tuple[slice, ...]
    out_weight: slice
    out_bias: int
    size: int


def param_layout(config: ModelConfig) -> ParamLayout:
    kernel_slices, bias_slices = [], []
    pos = 0
    for k in config.kernel_sizes:
        size = k * config.embedding_dim * config.n_filters
        kernel_slices.append(slice(pos, pos + size))
        pos += size
        bias_slices.append(slice(pos, pos + config.n_filters))
        pos += config.n_filters
    out_w = slice(pos, pos + config.total_filters)
    pos += config.total_filters
    return ParamLayout(
        kernel=tuple(kernel_slices),
        bias=tuple(bias_slices),
        out_weight=out_w,
        out_bias=pos,
        size=pos + 1,
    )


def flatten_params(params: ModelParams) -> np.ndarray:
    parts = []
    for kern, bias in zip(params.kernels, params.biases):
        parts.append(kern.ravel())
        parts.append(bias.ravel())
    parts.append(params.out_weight.ravel())
    parts.append(np.array([params.out_bias]))
    return np.concatenate(parts)


def unflatten_params(config: ModelConfig, flat: np.ndarray) -> ModelParams:
    layout = param_layout(config)
    if flat.shape != (layout.size,):
        raise ValueError(f"expected flat vector of length {layout.size}")
    kernels, biases = [], []
    for l, k in enumerate(config.kernel_sizes):
        kernels.append(
            flat[layout.kernel[l]]
            .reshape(k, config.embedding_dim, config.n_filters)
            .copy()
        )
        biases.append(flat[layout.bias[l]].copy())
    return ModelParams(
        kernels=kernels,
        biases=biases,
        out_weight=flat[layout.out_weight].copy(),
        out_bias=float(flat[layout.out_bias]),
    )


def coordinate_names(config: ModelConfig) -> list[str]:
    """Human-readable name per flat-vector coordinate, in layout order."""
    names = []
    d, f = config.embedding_dim, config.n_filters
    for l, k in enumerate(config.kernel_sizes):
        for a in range(k):
            for j in range(d):
                for g in range(f):
                    names.append(f"conv{l}.kernel[{a},{j},{g}]")
        for g in range(f):
            names.append(f"conv{l}.bias[{g}]")
    for g in range(config.total_filters):
        names.append(f"out.weight[{g}]")
    names.append("out.bias")
    return names


# ---------------------------------------------------------------------------
# Checkpoints


def _array_to_json(a: np.ndarray) -> dict:
    # float.hex round-trips every finite float64 exactly.
    return {"shape": list(a.shape), "data": [float(x).hex() for x in a.ravel()]}


def _array_from_json(obj: dict) -> np.ndarray:
    flat = np.array([float.fromhex(h) for h in obj["data"]], dtype=np.float64)
    return flat.reshape(obj["shape"])


def save_model(
    params: ModelParams,
    config: ModelConfig,
    destination,
    extra: dict | None = None,
) -> None:
    """Write a structured-text checkpoint.

    Floats are stored as hexadecimal significands, so a load returns
    bit-identical parameters.  ``extra`` is an arbitrary JSON-serializable
    block (training hyperparameters, data fingerprints) kept verbatim.
    """
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "config": {
            "kernel_sizes": list(config.kernel_sizes),
            "n_filters": config.n_filters,
            "embedding_dim": config.embedding_dim,
        },
        "params": {
            "conv": [
                {"kernel": _array_to_json(k), "bias": _array_to_json(b)}
                for k, b in zip(params.kernels, params.biases)
            ],
            "out_weight": _array_to_json(params.out_weight),
            "out_bias": float(params.out_bias).hex(),
        },
        "extra": extra if extra is not None else {},
    }
    text = json.dumps(doc, indent=1, sort_keys=True)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(text)


def load_model(source) -> tuple[ModelParams, ModelConfig, dict]:
    """Read a checkpoint back: (params, config, extra)."""
    if hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a model checkpoint (missing format marker)")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"checkpoint version {doc.get('version')} not supported "
            f"(loader speaks {MODEL_FORMAT_VERSION})"
        )
    cfg = ModelConfig(
        kernel_sizes=tuple(doc["config"]["kernel_sizes"]),
        n_filters=doc["config"]["n_filters"],
        embedding_dim=doc["config"]["embedding_dim"],
    )
    p = doc["params"]
    params = ModelParams(
        kernels=[_array_from_json(c["kernel"]) for c in p["conv"]],
        biases=[_array_from_json(c["bias"]) for c in p["conv"]],
        out_weight=_array_from_json(p["out_weight"]),
        out_bias=float.fromhex(p["out_bias"]),
    )
    return params, cfg, doc.get("extra", {})
