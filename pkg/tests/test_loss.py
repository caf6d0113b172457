"""Composite objective, analytic gradients, finite-difference verification."""

import math

import numpy as np
import pytest

from texttreat.loss import (
    LossWeights,
    activity_matrix,
    balanced_class_weights,
    compute_loss,
    compute_loss_and_grads,
    fd_check,
    pearson_matrix,
    weighted_bce,
)
from texttreat.model import (
    ModelConfig,
    ModelParams,
    flatten_params,
    forward,
    init_params,
    param_layout,
)

from oracles import naive_bce, naive_positive_correlation_max


def instance(seed=0, kernel_sizes=(2, 3), n_filters=3, dim=4, n_docs=6):
    rng = np.random.default_rng(seed)
    config = ModelConfig(kernel_sizes=kernel_sizes, n_filters=n_filters,
                         embedding_dim=dim)
    params = init_params(config, rng)
    lengths = rng.integers(4, 9, n_docs)
    embeddings = [rng.standard_normal((int(u), dim)) for u in lengths]
    y = np.arange(n_docs) % 2
    return config, params, embeddings, y


class TestLossWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(conv_l2=-0.1)
        with pytest.raises(ValueError):
            LossWeights(class_weights=(0.0, 1.0))
        LossWeights(0.1, 0.2, 0.3, (1.0, 2.0))  # valid

    def test_balanced(self):
        y = np.array([0, 0, 0, 1])
        assert balanced_class_weights(y) == (4 / 6, 4 / 2)
        with pytest.raises(ValueError):
            balanced_class_weights(np.zeros(5))


class TestWeightedBce:
    def test_hand_value(self):
        probs = np.array([0.8, 0.3])
        y = np.array([1, 0])
        want = -(3.0 * math.log(0.8) + 2.0 * math.log(0.7)) / 2
        assert weighted_bce(probs, y, (2.0, 3.0)) == pytest.approx(want, rel=1e-15)

    def test_unweighted_default(self):
        probs = np.array([0.6, 0.6])
        y = np.array([1, 1])
        assert weighted_bce(probs, y) == pytest.approx(-math.log(0.6), rel=1e-15)

    def test_clamp_keeps_loss_finite(self):
        loss = weighted_bce(np.array([0.0, 1.0]), np.array([1, 0]))
        assert math.isfinite(loss)
        # the upper clamp sits at fl(1 - 1e-12), a few ulps off the ideal
        assert loss == pytest.approx(-math.log(1e-12), rel=1e-5)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        probs = rng.uniform(0.01, 0.99, 20)
        y = rng.integers(0, 2, 20)
        got = weighted_bce(probs, y, (1.0, 2.5))
        assert got == pytest.approx(naive_bce(probs, y, (1.0, 2.5)), rel=1e-14)


class TestPearsonMatrix:
    def test_matches_corrcoef(self):
        x = np.random.default_rng(2).standard_normal((30, 5))
        assert np.allclose(pearson_matrix(x), np.corrcoef(x, rowvar=False),
                           atol=1e-12)

    def test_zero_variance_column(self):
        x = np.column_stack([np.ones(10), np.arange(10.0)])
        r = pearson_matrix(x)
        assert r[0, 0] == 0.0  # constant column: no correlation, even with itself
        assert r[0, 1] == 0.0 and r[1, 0] == 0.0
        assert r[1, 1] == 1.0

    def test_values_clipped(self):
        x = np.column_stack([np.arange(5.0), 2.0 * np.arange(5.0)])
        r = pearson_matrix(x)
        assert r[0, 1] == 1.0  # never 1.0000000000000002

    def test_activity_matrix_zeroes_diagonal_and_negatives(self):
        base = np.arange(8.0)
        x = np.column_stack([base, -base, base + 0.1])
        a = activity_matrix(x)
        assert not np.diag(a).any()
        assert a[0, 1] == 0.0  # perfectly anticorrelated
        assert a[0, 2] == 1.0


class TestComputeLoss:
    def test_terms_compose(self):
        config, params, embeddings, y = instance(seed=5)
        weights = LossWeights(0.02, 0.5, 0.03, (1.0, 1.5))
        trace = forward(params, embeddings)
        bd = compute_loss(params, trace, y, weights)
        assert bd.total == pytest.approx(
            bd.bce + bd.conv_l2 + bd.activity + bd.out_l1, rel=1e-15)
        want_l2 = 0.02 * sum(float((k * k).sum()) for k in params.kernels)
        assert bd.conv_l2 == pytest.approx(want_l2, rel=1e-15)
        want_l1 = 0.03 * float(np.abs(params.out_weight).sum())
        assert bd.out_l1 == pytest.approx(want_l1, rel=1e-15)
        assert bd.bce == pytest.approx(
            naive_bce(trace.probs, y, (1.0, 1.5)), rel=1e-13)

    def test_activity_term_matches_oracle(self):
        config, params, embeddings, y = instance(seed=6)
        weights = LossWeights(activity=2.0)
        trace = forward(params, embeddings)
        bd = compute_loss(params, trace, y, weights)
        want = 2.0 * sum(
            naive_positive_correlation_max(lt.activations) for lt in trace.layers)
        assert bd.activity == pytest.approx(want, rel=1e-12)
        for lt, r, peak in zip(trace.layers, bd.activity_matrices,
                               bd.activity_peaks):
            if peak is None:
                assert r.max() <= 0.0
            else:
                assert r[peak] == r.max() > 0.0
        if want > 0.0:
            assert any(p is not None for p in bd.activity_peaks)

    def test_zero_weights_zero_penalties(self):
        config, params, embeddings, y = instance(seed=7)
        trace = forward(params, embeddings)
        bd = compute_loss(params, trace, y, LossWeights())
        assert bd.conv_l2 == bd.activity == bd.out_l1 == 0.0
        assert bd.total == bd.bce


class TestGradients:
    def test_breakdown_matches_compute_loss(self):
        config, params, embeddings, y = instance(seed=8)
        weights = LossWeights(0.01, 1.0, 0.02, (1.0, 2.0))
        trace = forward(params, embeddings)
        bd1 = compute_loss(params, trace, y, weights)
        bd2, grads = compute_loss_and_grads(params, trace, y, weights)
        assert bd1.total == bd2.total
        assert [k.shape for k in grads.kernels] == [k.shape for k in params.kernels]
        assert grads.out_weight.shape == params.out_weight.shape

    def test_l1_subgradient_is_zero_at_zero(self):
        config, params, embeddings, y = instance(seed=9, kernel_sizes=(2,))
        params.out_weight = params.out_weight.copy()
        params.out_weight[0] = 0.0
        weights = LossWeights(out_l1=0.7, class_weights=(1.0, 1.0))
        trace = forward(params, embeddings)
        _, grads = compute_loss_and_grads(params, trace, y, weights)
        yf = np.asarray(y, dtype=np.float64)
        dlogit = (trace.probs - yf) / len(yf)
        smooth = trace.pooled.T @ dlogit
        assert grads.out_weight[0] == smooth[0]  # no penalty term at w = 0
        j = int(np.nonzero(params.out_weight)[0][0])
        want = smooth[j] + 0.7 * np.sign(params.out_weight[j])
        assert grads.out_weight[j] == pytest.approx(want, rel=1e-15)

    def test_output_bias_unpenalized(self):
        config, params, embeddings, y = instance(seed=10)
        weights = LossWeights(out_l1=5.0, class_weights=(1.0, 1.0))
        trace = forward(params, embeddings)
        _, grads = compute_loss_and_grads(params, trace, y, weights)
        yf = np.asarray(y, dtype=np.float64)
        assert grads.out_bias == pytest.approx(
            float(((trace.probs - yf) / len(yf)).sum()), rel=1e-15)


class TestFdCheck:
    def test_benign_instance_is_clean(self):
        rng = np.random.default_rng(np.random.SeedSequence([99, 0]))
        config = ModelConfig(kernel_sizes=(3,), n_filters=4, embedding_dim=8)
        lengths = rng.integers(6, 13, 16)
        embeddings = [rng.standard_normal((int(u), 8)) for u in lengths]
        y = np.arange(16) % 2
        params = init_params(config, rng)
        weights = LossWeights(0.01, 1.0, 0.01, (1.0, 1.3))
        report = fd_check(config, params, embeddings, y, weights)
        assert report.n_flagged == 0
        assert report.max_rel_error < 1e-5
        assert len(report.rel_errors) == param_layout(config).size
        assert len(report.names) == len(report.rel_errors)

    def test_max_pool_ties_flag_the_filter(self):
        config = ModelConfig(kernel_sizes=(2,), n_filters=2, embedding_dim=3)
        rng = np.random.default_rng(20)
        params = ModelParams(
            kernels=[np.zeros((2, 3, 2))],  # every window activates at 0.5
            biases=[np.zeros(2)],
            out_weight=rng.uniform(0.2, 0.8, 2),
            out_bias=0.1,
        )
        embeddings = [rng.standard_normal((5, 3)) for _ in range(4)]
        y = np.array([0, 1, 0, 1])
        report = fd_check(config, params, embeddings, y, LossWeights())
        layout = param_layout(config)
        conv_coords = np.zeros(layout.size, dtype=bool)
        conv_coords[layout.kernel[0]] = True
        conv_coords[layout.bias[0]] = True
        assert np.array_equal(report.flagged, conv_coords)
        assert any("max-pool tie" in r for r in report.reasons.values())
        assert report.max_rel_error < 1e-6  # output side still verified

    def test_activity_clip_flags_the_layer(self):
        # one window per document: no pool ties, but constant activations
        # put the activity peak exactly on the clip at zero
        config = ModelConfig(kernel_sizes=(3,), n_filters=2, embedding_dim=3)
        rng = np.random.default_rng(21)
        params = ModelParams(
            kernels=[np.zeros((3, 3, 2))],
            biases=[np.zeros(2)],
            out_weight=rng.uniform(0.2, 0.8, 2),
            out_bias=0.0,
        )
        embeddings = [rng.standard_normal((3, 3)) for _ in range(4)]
        y = np.array([0, 1, 0, 1])
        report = fd_check(config, params, embeddings, y,
                          LossWeights(activity=1.0))
        assert any("clip boundary" in r for r in report.reasons.values())
        layout = param_layout(config)
        assert report.flagged[layout.kernel[0]].all()
        assert report.flagged[layout.bias[0]].all()
        assert not report.flagged[layout.out_weight].any()

    def test_activity_rival_tie_flags_the_layer(self):
        # two duplicated filter pairs produce two exactly-tied peaks at 1.0,
        # a tie between rivals rather than a clip at zero
        config = ModelConfig(kernel_sizes=(2,), n_filters=4, embedding_dim=3)
        rng = np.random.default_rng(24)
        kern = np.empty((2, 3, 4))
        kern[:, :, 0] = kern[:, :, 1] = 0.3 * rng.standard_normal((2, 3))
        kern[:, :, 2] = kern[:, :, 3] = 0.3 * rng.standard_normal((2, 3))
        params = ModelParams(
            kernels=[kern],
            biases=[np.array([0.1, 0.1, -0.2, -0.2])],
            out_weight=rng.uniform(0.2, 0.8, 4),
            out_bias=0.0,
        )
        embeddings = [rng.standard_normal((6, 3)) for _ in range(4)]
        y = np.array([0, 1, 0, 1])
        report = fd_check(config, params, embeddings, y,
                          LossWeights(activity=0.7))
        layout = param_layout(config)
        assert report.flagged[layout.kernel[0]].all()
        assert report.flagged[layout.bias[0]].all()
        assert not report.flagged[layout.out_weight].any()
        reasons = set(report.reasons.values())
        assert "activity peak tie in conv0" in reasons
        assert not any("clip boundary" in r for r in reasons)

    def test_l1_kink_flags_the_weight(self):
        config, params, embeddings, y = instance(seed=22, kernel_sizes=(2,))
        params.out_weight = params.out_weight.copy()
        params.out_weight[1] = 5e-6  # inside one step of zero
        report = fd_check(config, params, embeddings, y,
                          LossWeights(out_l1=0.1, class_weights=(1.0, 1.0)),
                          h=1e-5)
        layout = param_layout(config)
        j = layout.out_weight.start + 1
        assert report.flagged[j]
        assert "L1" in report.reasons[j]
        assert report.flagged.sum() == 1

    def test_probability_clamp_flags_everything(self):
        config, params, embeddings, y = instance(seed=23)
        params.out_bias = 60.0  # saturates every probability to 1.0
        report = fd_check(config, params, embeddings, y, LossWeights())
        assert report.n_flagged == len(report.rel_errors)
        assert report.max_rel_error == 0.0
        assert all("clamp" in r for r in report.reasons.values())
