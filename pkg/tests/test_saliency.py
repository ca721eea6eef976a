"""Channel-attention chain tests: loop oracles, the fixed layout case, gradients."""

import numpy as np
import pytest

from fvig.gradcheck import grad_check
from fvig.graph import knn_adjacency, pairwise_sq_euclidean, saliency_adjacency
from fvig.saliency import (
    ChannelSaliencyParams,
    attention_normalize,
    channel_saliency_forward,
    project_nodes,
    saliency_matrix,
    saliency_scores,
)
from fvig.tensor import Tensor


def make_params(dim, latent, seed=0):
    return ChannelSaliencyParams.initialize(dim, latent, np.random.default_rng(seed))


class TestProjection:
    def test_identity_weight(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=(2, 5, 4))
        out = project_nodes(Tensor(v), Tensor(np.eye(4)))
        np.testing.assert_array_equal(out.data, v)

    def test_zero_weight(self):
        v = np.random.default_rng(1).normal(size=(2, 5, 4))
        out = project_nodes(Tensor(v), Tensor(np.zeros((4, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5, 3)))

    def test_random_vs_triple_loop(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(1, 3, 4))
        w = rng.normal(size=(4, 2))
        out = project_nodes(Tensor(v), Tensor(w)).data
        for i in range(3):
            for j in range(2):
                expected = sum(v[0, i, k] * w[k, j] for k in range(4))
                assert out[0, i, j] == pytest.approx(expected, abs=1e-12)


class TestScores:
    def test_zero_projections(self):
        params = make_params(4, 3)
        params.self_score.data[:] = 0
        params.neighbor_score.data[:] = 0
        projected = Tensor(np.random.default_rng(3).normal(size=(2, 5, 3)))
        s_self, s_neighbor = saliency_scores(projected, params)
        np.testing.assert_array_equal(s_self.data, np.zeros((2, 5, 1)))
        np.testing.assert_array_equal(s_neighbor.data, np.zeros((2, 1, 5)))

    def test_one_hot_rows_pick_a_channel(self):
        params = make_params(3, 3)
        params.self_score.data = np.array([[1.0], [0.0], [0.0]])
        projected = Tensor(np.eye(3)[None])
        s_self, _ = saliency_scores(projected, params)
        np.testing.assert_array_equal(s_self.data[0, :, 0], [1.0, 0.0, 0.0])

    def test_random_vs_loop(self):
        rng = np.random.default_rng(4)
        params = make_params(4, 3, seed=5)
        projected = rng.normal(size=(1, 4, 3))
        s_self, s_neighbor = saliency_scores(Tensor(projected), params)
        for i in range(4):
            expected_self = sum(projected[0, i, c] * params.self_score.data[c, 0] for c in range(3))
            expected_nbr = sum(projected[0, i, c] * params.neighbor_score.data[c, 0] for c in range(3))
            assert s_self.data[0, i, 0] == pytest.approx(expected_self, abs=1e-12)
            assert s_neighbor.data[0, 0, i] == pytest.approx(expected_nbr, abs=1e-12)


class TestMatrix:
    def test_fixed_layout(self):
        s_self = Tensor(np.array([[[1.0], [2.0]]]))
        s_neighbor = Tensor(np.array([[[10.0, 20.0]]]))
        out = saliency_matrix(s_self, s_neighbor)
        np.testing.assert_array_equal(out.data[0], [[11.0, 21.0], [12.0, 22.0]])

    def test_zero_inputs(self):
        out = saliency_matrix(Tensor(np.zeros((1, 3, 1))), Tensor(np.zeros((1, 1, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((1, 3, 3)))

    def test_random_vs_loop(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(2, 4, 1))
        b = rng.normal(size=(2, 1, 4))
        out = saliency_matrix(Tensor(a), Tensor(b)).data
        for bi in range(2):
            for i in range(4):
                for j in range(4):
                    assert out[bi, i, j] == a[bi, i, 0] + b[bi, 0, j]


class TestNormalize:
    def test_equal_row_gives_uniform(self):
        out = attention_normalize(Tensor(np.full((1, 2, 5), 3.0)))
        np.testing.assert_allclose(out.data, 0.2, atol=1e-15)

    def test_nonnegative_pair(self):
        # both entries >= 0, so the activation is the identity there
        out = attention_normalize(Tensor(np.array([[[0.0, np.log(2.0)]]])))
        np.testing.assert_allclose(out.data[0, 0], [1 / 3, 2 / 3], atol=1e-12)

    def test_full_chain_gradient_wrt_score_projections(self):
        rng = np.random.default_rng(7)
        features = Tensor(rng.normal(size=(2, 6, 4)))
        params = make_params(4, 3, seed=8)
        w = Tensor(rng.normal(size=(2, 6, 6)))

        for field in ("weight", "self_score", "neighbor_score"):
            original = getattr(params, field)

            def chain(t):
                setattr(params, field, t)
                return (channel_saliency_forward(features, params) * w).sum()

            try:
                report = grad_check(chain, original.data, h=1e-6, tol=1e-5)
            finally:
                setattr(params, field, original)
            assert report.passed, (field, report)


class TestForward:
    def test_zero_score_params_give_uniform_alpha_and_plain_knn(self):
        rng = np.random.default_rng(9)
        features = Tensor(rng.normal(size=(2, 16, 8)))
        params = make_params(8, 8, seed=10)
        params.self_score.data[:] = 0
        params.neighbor_score.data[:] = 0
        alpha = channel_saliency_forward(features, params)
        np.testing.assert_array_equal(alpha.data, np.full((2, 16, 16), 1.0 / 16))
        dist = pairwise_sq_euclidean(features.data)
        np.testing.assert_array_equal(
            saliency_adjacency(alpha.data, dist, 5), knn_adjacency(dist, 5)
        )

    def test_duplicate_features_give_identical_rows(self):
        rng = np.random.default_rng(11)
        v = rng.normal(size=(1, 5, 6))
        v[0, 3] = v[0, 1]  # duplicate node
        alpha = channel_saliency_forward(Tensor(v), make_params(6, 4, seed=12))
        np.testing.assert_array_equal(alpha.data[0, 3], alpha.data[0, 1])
        np.testing.assert_array_equal(alpha.data[0, :, 3], alpha.data[0, :, 1])

    def test_end_to_end_vs_step_by_step(self):
        rng = np.random.default_rng(13)
        features = Tensor(rng.normal(size=(2, 7, 5)))
        params = make_params(5, 4, seed=14)
        composed = channel_saliency_forward(features, params)
        projected = project_nodes(features, params.weight)
        s_self, s_neighbor = saliency_scores(projected, params)
        stepwise = attention_normalize(saliency_matrix(s_self, s_neighbor), params.leaky_slope)
        np.testing.assert_array_equal(composed.data, stepwise.data)

    def test_row_stochastic(self):
        rng = np.random.default_rng(15)
        alpha = channel_saliency_forward(Tensor(rng.normal(size=(3, 9, 6)) * 4), make_params(6, 6, seed=16))
        np.testing.assert_allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(alpha.data > 0) and np.all(alpha.data < 1)

    def test_row_shift_invariance_in_linear_region(self):
        rng = np.random.default_rng(17)
        scores = rng.uniform(0.1, 2.0, size=(1, 4, 4))  # all positive: activation is linear
        base = attention_normalize(Tensor(scores)).data
        shifted_scores = scores.copy()
        shifted_scores[0, 2] += 1.3  # constant added to one row, still positive
        shifted = attention_normalize(Tensor(shifted_scores)).data
        np.testing.assert_allclose(shifted[0, 2], base[0, 2], atol=1e-9)
