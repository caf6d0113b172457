"""Corpus container, EMBT binary serialization, splitting, and synthetic data.

The EMBT format stores tokenized texts, per-token embedding matrices, and a
binary outcome per sample.  Layout (all integers little-endian):

    magic b"EMBT" | version u32 = 1 | D u32 | N u64 | max_tokens u32
    | provenance: u32 byte length + UTF-8
    | N sample records

    sample record:
        id u64 | outcome u8 | U u32
        | U token strings (each: u32 byte length + UTF-8)
        | U*D float32 embedding block, row-major
        | raw_text: u32 byte length (0 = absent) + UTF-8

Embeddings are stored and held in memory as 32-bit floats so that a
write/read round trip is bit-exact; numerical code promotes to 64-bit.
Corpus values are treated as immutable after construction and are safe to
share across concurrent readers.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np
from scipy.special import expit

EMBT_MAGIC = b"EMBT"
EMBT_VERSION = 1


class CorpusError(Exception):
    """Base class for corpus construction and serialization failures."""


class InvariantError(CorpusError):
    """A Sample or Corpus violates one of its structural invariants."""


class BadMagicError(CorpusError):
    """The byte stream does not begin with the EMBT magic."""


class VersionMismatchError(CorpusError):
    """The file declares an EMBT format version this reader does not speak."""


class TruncatedCorpusError(CorpusError):
    """The byte stream ended before the declared payload was complete."""

    def __init__(self, message: str, sample_id: int | None = None):
        super().__init__(message)
        self.sample_id = sample_id


class NonFiniteEmbeddingError(CorpusError):
    """An embedding entry read from the stream is NaN or infinite."""


class SplitError(CorpusError):
    """A requested train/test split is empty or degenerate."""


@dataclass
class Sample:
    """One text: token strings, a U x D embedding matrix, a binary outcome.

    Invariants: the token count equals the embedding row count, U >= 1,
    every embedding entry is finite, and the outcome is 0 or 1.
    Embeddings are coerced to contiguous float32 on construction.
    """

    id: int
    tokens: tuple[str, ...]
    embeddings: np.ndarray
    outcome: int
    raw_text: str | None = None

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.raw_text == "":
            # Zero-length raw text serializes identically to absent text.
            self.raw_text = None
        self.validate()

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def validate(self):
        if self.id < 0:
            raise InvariantError(f"sample id must be non-negative, got {self.id}")
        if self.embeddings.ndim != 2:
            raise InvariantError(
                f"sample {self.id}: embeddings must be a 2-d matrix, "
                f"got shape {self.embeddings.shape}"
            )
        if len(self.tokens) < 1:
            raise InvariantError(f"sample {self.id}: needs at least one token")
        if len(self.tokens) != self.embeddings.shape[0]:
            raise InvariantError(
                f"sample {self.id}: {len(self.tokens)} tokens but "
                f"{self.embeddings.shape[0]} embedding rows"
            )
        if not np.isfinite(self.embeddings).all():
            raise InvariantError(f"sample {self.id}: non-finite embedding entry")
        if self.outcome not in (0, 1):
            raise InvariantError(
                f"sample {self.id}: outcome must be 0 or 1, got {self.outcome}"
            )


@dataclass
class Corpus:
    """An ordered collection of samples sharing one embedding dimension."""

    samples: list[Sample]
    embedding_dim: int
    max_tokens: int
    provenance: str = ""

    def __post_init__(self):
        self.validate()

    def __len__(self) -> int:
        return len(self.samples)

    def validate(self):
        if self.max_tokens < 1:
            raise InvariantError(f"max_tokens must be >= 1, got {self.max_tokens}")
        seen: set[int] = set()
        for s in self.samples:
            s.validate()
            if s.id in seen:
                raise InvariantError(f"duplicate sample id {s.id}")
            seen.add(s.id)
            if s.embeddings.shape[1] != self.embedding_dim:
                raise InvariantError(
                    f"sample {s.id}: embedding dim {s.embeddings.shape[1]} "
                    f"!= corpus dim {self.embedding_dim}"
                )
            if s.n_tokens > self.max_tokens:
                raise InvariantError(
                    f"sample {s.id}: {s.n_tokens} tokens exceeds "
                    f"max_tokens={self.max_tokens}"
                )

    def outcomes(self) -> np.ndarray:
        """Outcomes as a float64 vector in sample order."""
        return np.array([s.outcome for s in self.samples], dtype=np.float64)

    def subset(self, indices: Iterable[int]) -> "Corpus":
        """New corpus holding the samples at the given positions, in that order."""
        return Corpus(
            samples=[self.samples[i] for i in indices],
            embedding_dim=self.embedding_dim,
            max_tokens=self.max_tokens,
            provenance=self.provenance,
        )


def _equal_samples(a: Sample, b: Sample) -> bool:
    return (
        a.id == b.id
        and a.tokens == b.tokens
        and a.outcome == b.outcome
        and a.raw_text == b.raw_text
        and a.embeddings.shape == b.embeddings.shape
        and np.array_equal(
            a.embeddings.view(np.uint32), b.embeddings.view(np.uint32)
        )
    )


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    """Field-for-field equality, bit-exact on embedding floats."""
    return (
        a.embedding_dim == b.embedding_dim
        and a.max_tokens == b.max_tokens
        and a.provenance == b.provenance
        and len(a.samples) == len(b.samples)
        and all(_equal_samples(x, y) for x, y in zip(a.samples, b.samples))
    )


# ---------------------------------------------------------------------------
# EMBT serialization


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_corpus(corpus: Corpus, destination) -> int:
    """Serialize a corpus in EMBT format.

    ``destination`` is a binary file object or a path.  Returns the number
    of bytes written.  Invariants are re-checked before any byte is
    emitted, so a corpus mutated into an invalid state is rejected whole.
    """
    corpus.validate()
    if hasattr(destination, "write"):
        return _write_embt(corpus, destination)
    with open(destination, "wb") as fh:
        return _write_embt(corpus, fh)


def _write_embt(corpus: Corpus, fh: BinaryIO) -> int:
    n = 0

    def put(b: bytes):
        nonlocal n
        fh.write(b)
        n += len(b)

    put(EMBT_MAGIC)
    put(struct.pack("<I", EMBT_VERSION))
    put(struct.pack("<I", corpus.embedding_dim))
    put(struct.pack("<Q", len(corpus.samples)))
    put(struct.pack("<I", corpus.max_tokens))
    put(_pack_str(corpus.provenance))
    for s in corpus.samples:
        put(struct.pack("<Q", s.id))
        put(struct.pack("<B", s.outcome))
        put(struct.pack("<I", s.n_tokens))
        for tok in s.tokens:
            put(_pack_str(tok))
        put(np.ascontiguousarray(s.embeddings, dtype="<f4").tobytes())
        put(_pack_str(s.raw_text if s.raw_text is not None else ""))
    return n


class _Reader:
    """Cursor over a byte buffer that raises TruncatedCorpusError on underrun."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.sample_id: int | None = None

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            where = (
                f" while reading sample {self.sample_id}"
                if self.sample_id is not None
                else " in header"
            )
            raise TruncatedCorpusError(
                f"stream ended at byte {len(self.data)}, needed "
                f"{self.pos + count}{where}",
                sample_id=self.sample_id,
            )
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def read_corpus(source) -> Corpus:
    """Parse an EMBT byte stream back into a Corpus.

    ``source`` is a binary file object, a bytes object, or a path.  Raises
    BadMagicError, VersionMismatchError, TruncatedCorpusError (naming the
    sample being read when known), or NonFiniteEmbeddingError.
    """
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()

    r = _Reader(data)
    if r.take(4) != EMBT_MAGIC:
        raise BadMagicError("not an EMBT file: bad magic bytes")
    version = r.u32()
    if version != EMBT_VERSION:
        raise VersionMismatchError(
            f"EMBT version {version} not supported (reader speaks {EMBT_VERSION})"
        )
    dim = r.u32()
    n_samples = r.u64()
    max_tokens = r.u32()
    provenance = r.string()

    samples = []
    for _ in range(n_samples):
        r.sample_id = None
        sample_id = r.u64()
        r.sample_id = sample_id
        outcome = r.u8()
        n_tokens = r.u32()
        tokens = tuple(r.string() for _ in range(n_tokens))
        block = r.take(n_tokens * dim * 4)
        emb = np.frombuffer(block, dtype="<f4").reshape(n_tokens, dim)
        if not np.isfinite(emb).all():
            raise NonFiniteEmbeddingError(
                f"sample {sample_id}: non-finite embedding entry in stream"
            )
        raw = r.string()
        samples.append(
            Sample(
                id=sample_id,
                tokens=tokens,
                embeddings=emb.copy(),
                outcome=outcome,
                raw_text=raw if raw else None,
            )
        )
    return Corpus(
        samples=samples,
        embedding_dim=dim,
        max_tokens=max_tokens,
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# Train/test splitting


@dataclass(frozen=True)
class SplitSpec:
    """Train fraction plus the seed that fixes the partition."""

    train_fraction: float
    seed: int


def split(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus]:
    """Partition a corpus into train and test sides.

    The train side holds round(train_fraction * N) samples (round half to
    even, Python's built-in rounding).  Membership is decided by a seeded
    permutation; each side keeps its samples in original corpus order.
    """
    n = len(corpus)
    if n == 0:
        raise SplitError("cannot split an empty corpus")
    if not 0.0 < spec.train_fraction < 1.0:
        raise SplitError(
            f"train_fraction must be in (0, 1), got {spec.train_fraction}"
        )
    n_train = round(spec.train_fraction * n)
    if n_train == 0 or n_train == n:
        raise SplitError(
            f"fraction {spec.train_fraction} of {n} samples leaves one side empty"
        )
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return corpus.subset(train_idx), corpus.subset(test_idx)


# ---------------------------------------------------------------------------
# Synthetic corpora with planted ground truth


@dataclass(frozen=True)
class PlantedPattern:
    """A token sequence inserted into documents at a per-document rate.

    ``cluster_size`` > 1 plants a synonym cluster: the final token of the
    pattern may be replaced by any of ``cluster_size - 1`` synonym tokens
    whose base embedding is the canonical token's base vector plus a
    perturbation of scale ``cluster_spread``.
    """

    tokens: tuple[str, ...]
    base_rate: float
    cluster_spread: float = 0.0
    cluster_size: int = 1

    def members(self) -> list[tuple[str, ...]]:
        """All surface forms: the canonical sequence plus synonym variants."""
        out = [tuple(self.tokens)]
        for v in range(1, self.cluster_size):
            out.append(tuple(self.tokens[:-1]) + (f"{self.tokens[-1]}~{v}",))
        return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a reproducible corpus with known influential phrases.

    outcome_rule is "deterministic" (outcome = 1 iff any planted pattern is
    present) or "logistic" (outcome drawn with probability
    sigmoid(intercept + sum of coefficients over present patterns)).
    """

    n_samples: int
    vocab_size: int
    embedding_dim: int
    doc_length_range: tuple[int, int]
    planted_patterns: tuple[PlantedPattern, ...]
    outcome_rule: str = "deterministic"
    logistic_coefficients: tuple[float, ...] | None = None
    logistic_intercept: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self):
        lo, hi = self.doc_length_range
        if self.n_samples < 1 or self.vocab_size < 1 or self.embedding_dim < 1:
            raise InvariantError("n_samples, vocab_size, embedding_dim must be >= 1")
        if not 1 <= lo <= hi:
            raise InvariantError(f"bad doc_length_range {self.doc_length_range}")
        if self.noise_sigma < 0:
            raise InvariantError("noise_sigma must be >= 0")
        for p in self.planted_patterns:
            if not 1 <= len(p.tokens) <= 7:
                raise InvariantError(f"pattern length {len(p.tokens)} not in 1..7")
            if len(p.tokens) > lo:
                raise InvariantError(
                    f"pattern {p.tokens} is longer than the shortest document ({lo})"
                )
            if not 0.0 < p.base_rate < 1.0:
                raise InvariantError(f"base_rate {p.base_rate} not in (0, 1)")
            if p.cluster_spread < 0 or p.cluster_size < 1:
                raise InvariantError("cluster_spread >= 0 and cluster_size >= 1")
        if self.outcome_rule == "logistic":
            if self.logistic_coefficients is None or len(
                self.logistic_coefficients
            ) != len(self.planted_patterns):
                raise InvariantError(
                    "logistic rule needs one coefficient per planted pattern"
                )
        elif self.outcome_rule != "deterministic":
            raise InvariantError(f"unknown outcome_rule {self.outcome_rule!r}")


def token_base_vector(token: str, dim: int) -> np.ndarray:
    """Deterministic unit-scale base embedding for a token string.

    Keyed by the token's bytes via a stable hash, so the mapping is
    identical across processes and independent of the corpus seed.
    """
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


def _base_vector_table(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Base vectors for synonym-cluster tokens; all other tokens hash directly."""
    table: dict[str, np.ndarray] = {}
    for p in spec.planted_patterns:
        anchor = token_base_vector(p.tokens[-1], spec.embedding_dim)
        for member in p.members()[1:]:
            syn = member[-1]
            vec = anchor + p.cluster_spread * token_base_vector(
                syn, spec.embedding_dim
            )
            if syn in table and not np.array_equal(table[syn], vec):
                raise InvariantError(
                    f"synonym token {syn!r} defined twice with different vectors"
                )
            table[syn] = vec
    return table


def _contains(tokens: Sequence[str], phrase: tuple[str, ...]) -> bool:
    k = len(phrase)
    return any(
        tuple(tokens[t : t + k]) == phrase for t in range(len(tokens) - k + 1)
    )


def generate_synthetic(spec: SyntheticSpec) -> Corpus:
    """Build a corpus whose outcomes are driven by planted phrase patterns.

    Every token's embedding is its deterministic base vector plus Gaussian
    context noise of scale ``noise_sigma`` drawn fresh per occurrence.  The
    result is a pure function of its ``SyntheticSpec``: two identical
    recipes produce byte-identical corpora.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.doc_length_range
    vocab = [f"w{i:04d}" for i in range(spec.vocab_size)]
    overrides = _base_vector_table(spec)
    cache: dict[str, np.ndarray] = {}

    def base(token: str) -> np.ndarray:
        vec = cache.get(token)
        if vec is None:
            vec = overrides.get(token)
            if vec is None:
                vec = token_base_vector(token, spec.embedding_dim)
            cache[token] = vec
        return vec

    members = [p.members() for p in spec.planted_patterns]
    samples = []
    for i in range(spec.n_samples):
        length = int(rng.integers(lo, hi + 1))
        tokens = [vocab[j] for j in rng.integers(0, spec.vocab_size, length)]
        for p, forms in zip(spec.planted_patterns, members):
            if rng.random() < p.base_rate:
                form = forms[int(rng.integers(0, len(forms)))]
                start = int(rng.integers(0, length - len(form) + 1))
                tokens[start : start + len(form)] = form
        # Presence is re-scanned after all insertions: a later pattern can
        # overwrite an earlier one, and the outcome must follow the text.
        present = np.array(
            [any(_contains(tokens, f) for f in forms) for forms in members],
            dtype=np.float64,
        )
        if spec.outcome_rule == "deterministic":
            outcome = int(present.any())
        else:
            prob = expit(
                spec.logistic_intercept
                + float(np.dot(spec.logistic_coefficients, present))
            )
            outcome = int(rng.random() < prob)
        emb = np.stack([base(t) for t in tokens])
        if spec.noise_sigma > 0:
            emb = emb + spec.noise_sigma * rng.standard_normal(emb.shape)
        samples.append(
            Sample(
                id=i,
                tokens=tuple(tokens),
                embeddings=emb.astype(np.float32),
                outcome=outcome,
                raw_text=" ".join(tokens),
            )
        )
    return Corpus(
        samples=samples,
        embedding_dim=spec.embedding_dim,
        max_tokens=hi,
        provenance=f"synthetic seed={spec.seed}",
    )
