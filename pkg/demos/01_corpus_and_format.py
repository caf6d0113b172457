"""
Synthetic corpora and the embedding container
=============================================

Build a ground-truth corpus with a planted two-word phrase, write it to
the binary container, read it back, and carve a train/test split.
"""

import tempfile
from pathlib import Path

import numpy as np

from texttreat import (
    PlantedPattern,
    SplitSpec,
    SyntheticSpec,
    corpora_equal,
    generate_synthetic,
    read_corpus,
    split,
    write_corpus,
)

# Every document is a random token sequence; documents carrying the
# planted phrase get outcome 1, the rest outcome 0.  Token embeddings are
# deterministic per-token base vectors plus per-occurrence noise, so the
# "contextual" embeddings of the same word differ across positions.
spec = SyntheticSpec(
    n_samples=200,
    vocab_size=50,
    embedding_dim=16,
    doc_length_range=(6, 14),
    planted_patterns=(PlantedPattern(tokens=("w0003", "w0017"), base_rate=0.5),),
    noise_sigma=0.2,
    seed=7,
)
corpus = generate_synthetic(spec)
y = corpus.outcomes()
print(f"generated {len(corpus)} documents, dim {corpus.embedding_dim}, "
      f"positive rate {y.mean():.2f}")

sample = corpus.samples[0]
print(f"first document (id {sample.id}, outcome {sample.outcome}):")
print("  " + " ".join(sample.tokens))
print(f"  embeddings {sample.embeddings.shape}, dtype {sample.embeddings.dtype}")

# Round trip through the on-disk format.  Storage is float32, and the
# library keeps embeddings in float32 in memory, so nothing is lost.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.embt"
    write_corpus(corpus, path)
    loaded = read_corpus(path)
    print(f"wrote {path.stat().st_size} bytes, "
          f"round trip equal: {corpora_equal(corpus, loaded)}")

# A seeded split permutes once and slices; ids stay sorted inside each side.
train_side, test_side = split(corpus, SplitSpec(train_fraction=0.8, seed=1))
print(f"split: {len(train_side)} train / {len(test_side)} test, "
      f"train positive rate {train_side.outcomes().mean():.2f}")

overlap = set(s.id for s in train_side.samples) & set(s.id for s in test_side.samples)
print(f"id overlap between sides: {len(overlap)}")
