"""Corpus invariants, EMBT serialization, splitting, synthetic generation."""

import io
import struct

import numpy as np
import pytest

from texttreat.corpus import (
    BadMagicError,
    Corpus,
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


def make_sample(sid=0, tokens=("a", "b"), dim=3, outcome=0, raw=None, fill=0.5):
    emb = np.full((len(tokens), dim), fill, dtype=np.float32)
    return Sample(id=sid, tokens=tokens, embeddings=emb, outcome=outcome, raw_text=raw)


def make_corpus(n=4, dim=3, max_tokens=8):
    samples = [
        make_sample(sid=100 + i, tokens=tuple(f"t{i}{j}" for j in range(2 + i % 3)),
                    dim=dim, outcome=i % 2, fill=0.1 * i)
        for i in range(n)
    ]
    return Corpus(samples=samples, embedding_dim=dim, max_tokens=max_tokens,
                  provenance="unit test")


class TestSampleInvariants:
    def test_negative_id(self):
        with pytest.raises(InvariantError, match="non-negative"):
            make_sample(sid=-1)

    def test_token_row_mismatch(self):
        with pytest.raises(InvariantError, match="tokens but"):
            Sample(id=0, tokens=("a",), embeddings=np.zeros((2, 3)), outcome=0)

    def test_empty_tokens(self):
        with pytest.raises(InvariantError, match="at least one token"):
            Sample(id=0, tokens=(), embeddings=np.zeros((0, 3)), outcome=0)

    def test_non_finite(self):
        emb = np.array([[1.0, np.nan]])
        with pytest.raises(InvariantError, match="non-finite"):
            Sample(id=0, tokens=("a",), embeddings=emb, outcome=0)

    def test_bad_outcome(self):
        with pytest.raises(InvariantError, match="outcome"):
            make_sample(outcome=2)

    def test_one_d_embeddings(self):
        with pytest.raises(InvariantError, match="2-d"):
            Sample(id=0, tokens=("a",), embeddings=np.zeros(3), outcome=0)

    def test_coerced_to_float32(self):
        s = Sample(id=0, tokens=("a",), embeddings=np.ones((1, 2), dtype=np.float64),
                   outcome=1)
        assert s.embeddings.dtype == np.float32
        assert s.embeddings.flags["C_CONTIGUOUS"]

    def test_empty_raw_text_is_absent(self):
        # "" and None serialize identically, so they are the same value.
        assert make_sample(raw="").raw_text is None
        assert make_sample(raw="kept").raw_text == "kept"


class TestCorpusInvariants:
    def test_duplicate_ids(self):
        samples = [make_sample(sid=5), make_sample(sid=5, outcome=1)]
        with pytest.raises(InvariantError, match="duplicate sample id 5"):
            Corpus(samples=samples, embedding_dim=3, max_tokens=8)

    def test_dim_mismatch(self):
        with pytest.raises(InvariantError, match="corpus dim"):
            Corpus(samples=[make_sample(dim=4)], embedding_dim=3, max_tokens=8)

    def test_token_budget(self):
        s = make_sample(tokens=("a", "b", "c"))
        with pytest.raises(InvariantError, match="exceeds"):
            Corpus(samples=[s], embedding_dim=3, max_tokens=2)

    def test_bad_max_tokens(self):
        with pytest.raises(InvariantError, match="max_tokens"):
            Corpus(samples=[], embedding_dim=3, max_tokens=0)

    def test_outcomes_vector(self):
        c = make_corpus(n=5)
        assert c.outcomes().tolist() == [0.0, 1.0, 0.0, 1.0, 0.0]
        assert c.outcomes().dtype == np.float64

    def test_subset_preserves_order(self):
        c = make_corpus(n=5)
        sub = c.subset([3, 1])
        assert [s.id for s in sub.samples] == [103, 101]
        assert sub.provenance == c.provenance

    def test_mutated_corpus_rejected_at_write(self):
        c = make_corpus(n=2)
        c.samples.append(c.samples[0])  # duplicate id after construction
        with pytest.raises(InvariantError):
            write_corpus(c, io.BytesIO())


class TestEmbtFormat:
    def test_round_trip_all_fields(self):
        samples = [
            Sample(id=7, tokens=("hello", "世界", "🙂"),
                   embeddings=np.array([[1.5, -2.25], [0.1, 0.2], [3.0, 4.0]],
                                       dtype=np.float32),
                   outcome=1, raw_text="hello 世界 🙂"),
            Sample(id=9, tokens=("solo",),
                   embeddings=np.array([[np.float32(0.1), np.float32(1e-30)]]),
                   outcome=0, raw_text=None),
        ]
        c = Corpus(samples=samples, embedding_dim=2, max_tokens=10,
                   provenance="простой · test")
        buf = io.BytesIO()
        n_written = write_corpus(c, buf)
        data = buf.getvalue()
        assert n_written == len(data)
        back = read_corpus(data)
        assert corpora_equal(c, back)
        # a second write of the parsed corpus reproduces the bytes exactly
        buf2 = io.BytesIO()
        write_corpus(back, buf2)
        assert buf2.getvalue() == data

    def test_read_from_path_and_file_object(self, tmp_path):
        c = make_corpus()
        path = tmp_path / "c.embt"
        write_corpus(c, path)
        assert corpora_equal(read_corpus(path), c)
        with open(path, "rb") as fh:
            assert corpora_equal(read_corpus(fh), c)

    def test_header_layout(self):
        """Decode the header with struct alone, independent of read_corpus."""
        c = make_corpus(n=3, dim=5, max_tokens=9)
        buf = io.BytesIO()
        write_corpus(c, buf)
        data = buf.getvalue()
        assert data[:4] == b"EMBT"
        version, dim = struct.unpack_from("<II", data, 4)
        (n_samples,) = struct.unpack_from("<Q", data, 12)
        max_tokens, prov_len = struct.unpack_from("<II", data, 20)
        assert (version, dim, n_samples, max_tokens) == (1, 5, 3, 9)
        prov = data[28 : 28 + prov_len].decode("utf-8")
        assert prov == "unit test"

    def test_record_layout(self):
        """Decode one full record with struct alone."""
        s = Sample(id=42, tokens=("ab", "c"),
                   embeddings=np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32),
                   outcome=1, raw_text="ab c")
        c = Corpus(samples=[s], embedding_dim=2, max_tokens=4, provenance="")
        buf = io.BytesIO()
        write_corpus(c, buf)
        data = buf.getvalue()
        pos = 24 + 4  # header with empty provenance
        sid, outcome, n_tok = struct.unpack_from("<QBI", data, pos)
        assert (sid, outcome, n_tok) == (42, 1, 2)
        pos += 13
        for expected in ("ab", "c"):
            (ln,) = struct.unpack_from("<I", data, pos)
            assert data[pos + 4 : pos + 4 + ln].decode() == expected
            pos += 4 + ln
        block = np.frombuffer(data, dtype="<f4", count=4, offset=pos)
        assert block.tolist() == [1.0, 2.0, 3.0, 4.0]
        pos += 16
        (raw_len,) = struct.unpack_from("<I", data, pos)
        assert data[pos + 4 : pos + 4 + raw_len].decode() == "ab c"
        assert pos + 4 + raw_len == len(data)

    def test_empty_corpus_round_trips(self):
        c = Corpus(samples=[], embedding_dim=4, max_tokens=1, provenance="none")
        buf = io.BytesIO()
        write_corpus(c, buf)
        back = read_corpus(buf.getvalue())
        assert corpora_equal(c, back)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            read_corpus(b"NOPE" + b"\x00" * 40)

    def test_version_mismatch(self):
        buf = io.BytesIO()
        write_corpus(make_corpus(), buf)
        data = bytearray(buf.getvalue())
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(VersionMismatchError, match="version 2"):
            read_corpus(bytes(data))

    def test_truncated_header(self):
        buf = io.BytesIO()
        write_corpus(make_corpus(), buf)
        with pytest.raises(TruncatedCorpusError, match="header") as exc:
            read_corpus(buf.getvalue()[:10])
        assert exc.value.sample_id is None

    def test_truncated_mid_sample_names_the_sample(self):
        c = make_corpus(n=3)
        buf = io.BytesIO()
        write_corpus(c, buf)
        data = buf.getvalue()
        # cut 3 bytes off the end: inside the last sample's trailing field
        with pytest.raises(TruncatedCorpusError) as exc:
            read_corpus(data[:-3])
        assert exc.value.sample_id == 102

    def test_non_finite_entry_in_stream(self):
        marker = np.float32(12345.6789)
        s = Sample(id=0, tokens=("a",),
                   embeddings=np.array([[marker, 1.0]], dtype=np.float32),
                   outcome=0)
        c = Corpus(samples=[s], embedding_dim=2, max_tokens=2)
        buf = io.BytesIO()
        write_corpus(c, buf)
        data = buf.getvalue()
        pattern = marker.tobytes()
        at = data.find(pattern)
        assert at > 0
        patched = data[:at] + np.float32(np.nan).tobytes() + data[at + 4 :]
        with pytest.raises(NonFiniteEmbeddingError, match="sample 0"):
            read_corpus(patched)


class TestSplit:
    def test_round_half_even_sizes(self):
        # round() rounds halves to the even neighbor: 2.5 -> 2, 3.5 -> 4, 4.5 -> 4
        for n, frac, expected in [(10, 0.25, 2), (10, 0.35, 4), (9, 0.5, 4)]:
            c = make_corpus(n=n)
            tr, te = split(c, SplitSpec(train_fraction=frac, seed=0))
            assert (len(tr), len(te)) == (expected, n - expected)

    def test_partition_matches_seeded_permutation(self):
        c = make_corpus(n=20)
        spec = SplitSpec(train_fraction=0.7, seed=123)
        tr, te = split(c, spec)
        perm = np.random.default_rng(123).permutation(20)
        want_train = sorted(perm[:14])
        assert [s.id for s in tr.samples] == [100 + i for i in want_train]
        assert [s.id for s in te.samples] == [100 + i for i in sorted(perm[14:])]

    def test_sides_disjoint_and_ordered(self):
        c = make_corpus(n=15)
        tr, te = split(c, SplitSpec(train_fraction=0.6, seed=7))
        tr_ids = [s.id for s in tr.samples]
        te_ids = [s.id for s in te.samples]
        assert not set(tr_ids) & set(te_ids)
        assert sorted(tr_ids + te_ids) == [s.id for s in c.samples]
        assert tr_ids == sorted(tr_ids) and te_ids == sorted(te_ids)

    def test_deterministic(self):
        c = make_corpus(n=12)
        a = split(c, SplitSpec(0.5, seed=3))
        b = split(c, SplitSpec(0.5, seed=3))
        assert corpora_equal(a[0], b[0]) and corpora_equal(a[1], b[1])
        other = split(c, SplitSpec(0.5, seed=4))
        assert not corpora_equal(a[0], other[0])

    def test_degenerate_rejected(self):
        c = make_corpus(n=4)
        with pytest.raises(SplitError):
            split(c, SplitSpec(0.05, seed=0))  # rounds to zero train rows
        with pytest.raises(SplitError):
            split(c, SplitSpec(1.5, seed=0))
        with pytest.raises(SplitError):
            split(Corpus([], 3, 8), SplitSpec(0.5, seed=0))


def small_spec(**overrides):
    base = dict(
        n_samples=50,
        vocab_size=20,
        embedding_dim=4,
        doc_length_range=(5, 9),
        planted_patterns=(PlantedPattern(tokens=("w0002", "w0005"), base_rate=0.4),),
        noise_sigma=0.0,
        seed=3,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


class TestSynthetic:
    def test_bitwise_deterministic(self):
        a = generate_synthetic(small_spec(noise_sigma=0.2))
        b = generate_synthetic(small_spec(noise_sigma=0.2))
        assert corpora_equal(a, b)
        c = generate_synthetic(small_spec(noise_sigma=0.2, seed=4))
        assert not corpora_equal(a, c)

    def test_shape_and_metadata(self):
        c = generate_synthetic(small_spec())
        assert len(c) == 50
        assert c.embedding_dim == 4
        assert c.max_tokens == 9
        assert c.provenance == "synthetic seed=3"
        for s in c.samples:
            assert 5 <= s.n_tokens <= 9
            assert s.raw_text == " ".join(s.tokens)

    def test_deterministic_outcome_follows_text(self):
        c = generate_synthetic(small_spec())
        phrase = ("w0002", "w0005")
        for s in c.samples:
            present = any(
                s.tokens[t : t + 2] == phrase for t in range(s.n_tokens - 1)
            )
            assert s.outcome == int(present)

    def test_both_outcome_classes_appear(self):
        y = generate_synthetic(small_spec()).outcomes()
        assert 0.0 < y.mean() < 1.0

    def test_embeddings_are_base_vectors_without_noise(self):
        c = generate_synthetic(small_spec())
        s = c.samples[0]
        for tok, row in zip(s.tokens, s.embeddings):
            want = token_base_vector(tok, 4).astype(np.float32)
            assert np.array_equal(row, want)

    def test_noise_separates_occurrences(self):
        c = generate_synthetic(small_spec(noise_sigma=0.3))
        rows = {}
        found_repeat = False
        for s in c.samples:
            for tok, row in zip(s.tokens, s.embeddings):
                if tok in rows and not np.array_equal(rows[tok], row):
                    found_repeat = True
                rows.setdefault(tok, row)
        assert found_repeat

    def test_base_vectors_stable_across_specs(self):
        # the token -> base vector map must not depend on the corpus seed
        v1 = token_base_vector("w0002", 6)
        v2 = token_base_vector("w0002", 6)
        assert np.array_equal(v1, v2)
        assert not np.array_equal(v1, token_base_vector("w0003", 6))

    def test_synonym_members_and_vectors(self):
        p = PlantedPattern(tokens=("x", "y"), base_rate=0.5,
                           cluster_spread=0.25, cluster_size=3)
        assert p.members() == [("x", "y"), ("x", "y~1"), ("x", "y~2")]
        spec = small_spec(planted_patterns=(p,), vocab_size=5)
        c = generate_synthetic(spec)
        anchor = token_base_vector("y", 4)
        want = (anchor + 0.25 * token_base_vector("y~1", 4)).astype(np.float32)
        hit = False
        for s in c.samples:
            for tok, row in zip(s.tokens, s.embeddings):
                if tok == "y~1":
                    assert np.array_equal(row, want)
                    hit = True
        assert hit, "no synonym variant was ever planted"

    def test_logistic_rates_match_target(self):
        spec = SyntheticSpec(
            n_samples=12000, vocab_size=30, embedding_dim=2,
            doc_length_range=(4, 6),
            planted_patterns=(PlantedPattern(tokens=("w0003",), base_rate=0.5),),
            outcome_rule="logistic",
            logistic_coefficients=(2.0,),
            logistic_intercept=-1.0,
            seed=17,
        )
        c = generate_synthetic(spec)
        present = np.array([("w0003" in s.tokens) for s in c.samples])
        y = c.outcomes()
        from scipy.special import expit

        assert abs(y[present].mean() - expit(1.0)) < 0.02
        assert abs(y[~present].mean() - expit(-1.0)) < 0.02

    def test_validation_errors(self):
        with pytest.raises(InvariantError, match="longer than the shortest"):
            small_spec(
                doc_length_range=(1, 5),
                planted_patterns=(PlantedPattern(("a", "b"), 0.5),),
            ).validate()
        with pytest.raises(InvariantError, match="base_rate"):
            small_spec(
                planted_patterns=(PlantedPattern(("a",), 1.5),)
            ).validate()
        with pytest.raises(InvariantError, match="one coefficient per"):
            small_spec(outcome_rule="logistic").validate()
        with pytest.raises(InvariantError, match="outcome_rule"):
            small_spec(outcome_rule="mystery").validate()
        with pytest.raises(InvariantError, match="1..7"):
            small_spec(
                doc_length_range=(9, 9),
                planted_patterns=(PlantedPattern(tuple("abcdefgh"), 0.5),),
            ).validate()
