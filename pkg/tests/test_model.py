"""Model architecture: forward pass, flat layout, checkpoints."""

import io
import json

import numpy as np
import pytest

from texttreat.model import (
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

from oracles import naive_forward


def random_instance(seed=0, kernel_sizes=(2, 3), n_filters=3, dim=4, n_docs=5,
                    lengths=(1, 8)):
    rng = np.random.default_rng(seed)
    config = ModelConfig(kernel_sizes=kernel_sizes, n_filters=n_filters,
                         embedding_dim=dim)
    params = init_params(config, rng)
    sizes = rng.integers(lengths[0], lengths[1] + 1, n_docs)
    embeddings = [rng.standard_normal((int(u), dim)).astype(np.float32)
                  for u in sizes]
    return config, params, embeddings


class TestModelConfig:
    def test_properties(self):
        c = ModelConfig(kernel_sizes=(2, 5), n_filters=4, embedding_dim=8)
        assert c.n_layers == 2
        assert c.total_filters == 8

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(kernel_sizes=(), n_filters=4, embedding_dim=8)
        with pytest.raises(ValueError):
            ModelConfig(kernel_sizes=(0,), n_filters=4, embedding_dim=8)
        with pytest.raises(ValueError):
            ModelConfig(kernel_sizes=(3,), n_filters=0, embedding_dim=8)

    def test_kernel_sizes_coerced_to_tuple(self):
        assert ModelConfig(kernel_sizes=[3, 4], n_filters=1,
                           embedding_dim=2).kernel_sizes == (3, 4)


class TestInitParams:
    def test_shapes_and_bounds(self):
        config = ModelConfig(kernel_sizes=(2, 4), n_filters=3, embedding_dim=5)
        params = init_params(config, np.random.default_rng(0))
        assert [k.shape for k in params.kernels] == [(2, 5, 3), (4, 5, 3)]
        assert all(b.shape == (3,) and not b.any() for b in params.biases)
        assert params.out_weight.shape == (6,)
        assert params.out_bias == 0.0
        for k, width in zip(params.kernels, (2, 4)):
            limit = np.sqrt(6.0 / (width * 5 + 3))
            assert np.abs(k).max() < limit
        assert np.abs(params.out_weight).max() < np.sqrt(6.0 / 7)

    def test_seed_reproducible(self):
        config = ModelConfig(kernel_sizes=(3,), n_filters=2, embedding_dim=4)
        a = init_params(config, np.random.default_rng(11))
        b = init_params(config, np.random.default_rng(11))
        assert np.array_equal(flatten_params(a), flatten_params(b))


class TestForward:
    def test_matches_loop_oracle(self):
        config, params, embeddings = random_instance(seed=1)
        trace = forward(params, embeddings)
        pooled, probs = naive_forward(params, embeddings)
        assert np.allclose(trace.pooled, np.array(pooled), atol=1e-12, rtol=0)
        assert np.allclose(trace.probs, np.array(probs), atol=1e-12, rtol=0)

    def test_short_document_padded(self):
        # a 1-token document against a width-3 kernel: exactly one window
        config, params, _ = random_instance(seed=2, kernel_sizes=(3,))
        emb = [np.random.default_rng(5).standard_normal((1, 4)).astype(np.float32)]
        trace = forward(params, emb)
        assert trace.layers[0].counts.tolist() == [1]
        assert trace.layers[0].windows.shape == (1, 3, 4)
        # rows beyond the document are zero
        assert not trace.layers[0].windows[0, 1:].any()
        pooled, probs = naive_forward(params, emb)
        assert np.allclose(trace.probs, probs, atol=1e-12, rtol=0)

    def test_window_segments_are_consistent(self):
        config, params, embeddings = random_instance(seed=3, n_docs=6)
        trace = forward(params, embeddings)
        for lt, k in zip(trace.layers, config.kernel_sizes):
            want = [max(e.shape[0] - k + 1, 1) for e in embeddings]
            assert lt.counts.tolist() == want
            assert lt.starts.tolist() == list(np.cumsum([0] + want[:-1]))
            assert lt.activations.shape[0] == sum(want)

    def test_pooled_equals_activation_at_argmax(self):
        config, params, embeddings = random_instance(seed=4)
        trace = forward(params, embeddings)
        for lt in trace.layers:
            for i in range(len(embeddings)):
                seg = lt.activations[lt.starts[i] : lt.starts[i] + lt.counts[i]]
                for f in range(seg.shape[1]):
                    assert lt.pooled[i, f] == seg[lt.argmax[i, f], f]
                    assert (seg[: lt.argmax[i, f], f] < lt.pooled[i, f]).all()

    def test_ties_resolve_to_first_window(self):
        config = ModelConfig(kernel_sizes=(2,), n_filters=2, embedding_dim=3)
        params = ModelParams(
            kernels=[np.zeros((2, 3, 2))],
            biases=[np.zeros(2)],
            out_weight=np.ones(2),
            out_bias=0.0,
        )
        emb = [np.ones((6, 3), dtype=np.float32)]
        trace = forward(params, emb)
        assert (trace.layers[0].argmax == 0).all()
        assert np.allclose(trace.pooled, 0.5)

    def test_logit_composition(self):
        config, params, embeddings = random_instance(seed=6)
        trace = forward(params, embeddings)
        want = trace.pooled @ params.out_weight + params.out_bias
        assert np.array_equal(trace.logits, want)

    def test_float32_promoted(self):
        config, params, embeddings = random_instance(seed=7)
        trace = forward(params, embeddings)
        assert trace.pooled.dtype == np.float64
        assert trace.probs.dtype == np.float64


class TestPredict:
    def test_chunking_reproducible_and_stable(self):
        config, params, embeddings = random_instance(seed=8, n_docs=11)
        all_at_once = forward(params, embeddings).probs
        # one chunk spanning everything is the same computation, bit for bit
        assert np.array_equal(predict(params, embeddings, chunk=500), all_at_once)
        # smaller chunks change the BLAS batch shape: last-bit wiggle only
        for chunk in (1, 3):
            got = predict(params, embeddings, chunk=chunk)
            assert np.allclose(got, all_at_once, atol=1e-14, rtol=0)
        # a fixed chunk size is exactly reproducible
        assert np.array_equal(predict(params, embeddings, chunk=3),
                              predict(params, embeddings, chunk=3))

    def test_empty_input(self):
        config, params, _ = random_instance(seed=9)
        assert predict(params, []).shape == (0,)


class TestFlatLayout:
    def test_round_trip(self):
        config, params, _ = random_instance(seed=10)
        flat = flatten_params(params)
        back = unflatten_params(config, flat)
        assert np.array_equal(flatten_params(back), flat)
        for a, b in zip(params.kernels, back.kernels):
            assert np.array_equal(a, b)

    def test_layout_is_contiguous_and_complete(self):
        config = ModelConfig(kernel_sizes=(2, 3), n_filters=4, embedding_dim=5)
        layout = param_layout(config)
        pos = 0
        for l in range(2):
            assert layout.kernel[l] == slice(pos, pos + config.kernel_sizes[l] * 20)
            pos += config.kernel_sizes[l] * 20
            assert layout.bias[l] == slice(pos, pos + 4)
            pos += 4
        assert layout.out_weight == slice(pos, pos + 8)
        assert layout.out_bias == pos + 8
        assert layout.size == pos + 9
        assert layout.size == len(flatten_params(init_params(
            config, np.random.default_rng(0))))

    def test_wrong_length_rejected(self):
        config = ModelConfig(kernel_sizes=(2,), n_filters=2, embedding_dim=2)
        with pytest.raises(ValueError, match="length"):
            unflatten_params(config, np.zeros(3))

    def test_coordinate_names(self):
        config = ModelConfig(kernel_sizes=(2,), n_filters=2, embedding_dim=2)
        names = coordinate_names(config)
        assert len(names) == param_layout(config).size
        assert names[0] == "conv0.kernel[0,0,0]"
        assert names[1] == "conv0.kernel[0,0,1]"  # filter index varies fastest
        assert names[8] == "conv0.bias[0]"
        assert names[-1] == "out.bias"
        assert names[-2] == "out.weight[1]"

    def test_names_align_with_flat_values(self):
        # perturb one named coordinate, confirm it lands in the right tensor
        config = ModelConfig(kernel_sizes=(2,), n_filters=2, embedding_dim=2)
        params = init_params(config, np.random.default_rng(1))
        flat = flatten_params(params)
        names = coordinate_names(config)
        j = names.index("conv0.kernel[1,0,1]")
        flat[j] += 5.0
        back = unflatten_params(config, flat)
        assert back.kernels[0][1, 0, 1] == params.kernels[0][1, 0, 1] + 5.0


class TestCheckpoints:
    def test_bit_exact_round_trip(self, tmp_path):
        config, params, _ = random_instance(seed=12)
        path = tmp_path / "model.json"
        save_model(params, config, path, extra={"note": "x", "value": 3})
        loaded, cfg, extra = load_model(path)
        assert cfg == config
        assert extra == {"note": "x", "value": 3}
        assert np.array_equal(flatten_params(loaded), flatten_params(params))
        # exact equality, not approximate: floats go through float.hex()
        assert loaded.out_bias == params.out_bias

    def test_file_object_round_trip(self):
        config, params, _ = random_instance(seed=13)
        buf = io.StringIO()
        save_model(params, config, buf)
        buf.seek(0)
        loaded, cfg, extra = load_model(buf)
        assert np.array_equal(flatten_params(loaded), flatten_params(params))
        assert extra == {}

    def test_checkpoint_is_plain_json(self, tmp_path):
        config, params, _ = random_instance(seed=14)
        path = tmp_path / "model.json"
        save_model(params, config, path)
        doc = json.loads(path.read_text())
        assert doc["format"] == "texttreat-model"
        assert doc["version"] == 1
        assert len(doc["params"]["conv"]) == config.n_layers

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "other", "version": 1}))
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_wrong_version_rejected(self, tmp_path):
        config, params, _ = random_instance(seed=15)
        path = tmp_path / "model.json"
        save_model(params, config, path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelVersionError, match="99"):
            load_model(path)
