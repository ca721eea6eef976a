"""Network assembly tests: patchify oracle, baseline equivalence, census, checkpoints."""

import numpy as np
import pytest

from fvig.checkpoint import CheckpointError, load_checkpoint
from fvig.graph import knn_adjacency, pairwise_sq_euclidean
from fvig.model import (
    ConfigError,
    FfnBlock,
    FViGModel,
    GrapherBlock,
    ModelConfig,
    count_params,
    max_relative_aggregate,
    patchify,
)
from fvig.tensor import Tensor, concat_lastdim, gather_neighbors, leaky_relu, matmul, reshape, softmax_lastdim


def micro_config(**overrides):
    base = dict(
        image_size=32, patch_size=8, dim=32, depth=2, k=4, heads=4,
        dilation_schedule="1,2", num_classes=3,
    )
    base.update(overrides)
    return ModelConfig(**base)


class TestPatchEmbed:
    def test_node_count(self):
        cfg = micro_config()
        assert cfg.num_nodes == 16
        model = FViGModel(cfg, rng=np.random.default_rng(0))
        logits = model.forward(np.zeros((1, 3, 32, 32)))
        assert logits.shape == (1, 3)

    def test_zero_image_zero_bias_gives_positional_only(self):
        cfg = micro_config()
        model = FViGModel(cfg, rng=np.random.default_rng(1))
        x = patchify(np.zeros((1, 3, 32, 32)), 8)
        embedded = x @ model.embed_weight.data + model.embed_bias.data
        np.testing.assert_array_equal(embedded, np.zeros((1, 16, 32)))

    def test_patchify_vs_explicit_loop(self):
        rng = np.random.default_rng(2)
        images = rng.random((2, 3, 16, 16))
        p = 4
        out = patchify(images, p)
        grid = 4
        for b in range(2):
            for gi in range(grid):
                for gj in range(grid):
                    node = gi * grid + gj
                    expected = []
                    for c in range(3):
                        for u in range(p):
                            for v in range(p):
                                expected.append(images[b, c, gi * p + u, gj * p + v])
                    np.testing.assert_array_equal(out[b, node], expected)

    def test_wrong_image_size_rejected(self):
        model = FViGModel(micro_config(), rng=np.random.default_rng(3))
        with pytest.raises(ConfigError, match="expected images"):
            model.forward(np.zeros((1, 3, 16, 16)))


class TestMaxRelative:
    def test_identical_neighbors_give_zero_relative_part(self):
        v = np.tile(np.array([1.0, -2.0, 0.5]), (1, 4, 1))
        adj = np.tile(np.arange(4)[None, :, None], (1, 1, 2))
        adj[0, :, 1] = (np.arange(4) + 1) % 4
        out = max_relative_aggregate(Tensor(v), adj)
        np.testing.assert_array_equal(out.data[..., :3], v)
        np.testing.assert_array_equal(out.data[..., 3:], np.zeros((1, 4, 3)))

    def test_self_only_neighborhood(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=(2, 5, 3))
        adj = np.tile(np.arange(5)[None, :, None], (2, 1, 1))
        out = max_relative_aggregate(Tensor(v), adj)
        np.testing.assert_array_equal(out.data[..., 3:], np.zeros((2, 5, 3)))

    def test_random_vs_loop_oracle(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=(2, 6, 4))
        adj = np.stack([np.stack([np.array([i, (i + 2) % 6, (i + 4) % 6]) for i in range(6)])] * 2)
        out = max_relative_aggregate(Tensor(v), adj).data
        for b in range(2):
            for i in range(6):
                rel = np.full(4, -np.inf)
                for j in adj[b, i]:
                    rel = np.maximum(rel, v[b, j] - v[b, i])
                np.testing.assert_allclose(out[b, i], np.concatenate([v[b, i], rel]), atol=1e-12)


def baseline_block_forward(block: GrapherBlock, x: Tensor) -> Tensor:
    """Straight-line reimplementation of the flags-off block (plain KNN + max-relative conv)."""
    normed = block.norm(x)
    adjacency = knn_adjacency(pairwise_sq_euclidean(normed.data), block.config.k)
    b, n, d = normed.shape
    neighbors = gather_neighbors(normed, adjacency)
    relative = neighbors - reshape(normed, (b, n, 1, d))
    agg = concat_lastdim([normed, relative.max(axis=2)])
    y = leaky_relu(matmul(agg, block.agg_weight) + block.agg_bias, block.config.leaky_slope)
    y = matmul(y, block.update_weight) + block.update_bias
    return x + y


class TestGrapherBlock:
    def test_flags_off_equals_baseline_bit_for_bit(self):
        cfg = micro_config(
            use_channel_saliency=False, use_spatial_saliency=False, use_dilation=False
        )
        rng = np.random.default_rng(6)
        block = GrapherBlock(cfg, dilation=1, rng=rng)
        x = Tensor(np.random.default_rng(7).normal(size=(2, 16, 32)))
        flagged, _ = block.forward(x, training=False)
        baseline = baseline_block_forward(block, x)
        np.testing.assert_array_equal(flagged.data, baseline.data)

    def test_output_shape_matches_input(self):
        for flags in [(True, True, True), (False, True, False), (True, False, True)]:
            cfg = micro_config(
                use_channel_saliency=flags[0],
                use_spatial_saliency=flags[1],
                use_dilation=flags[2],
            )
            block = GrapherBlock(cfg, dilation=1, rng=np.random.default_rng(8))
            x = Tensor(np.random.default_rng(9).normal(size=(2, 16, 32)))
            out, adjacency = block.forward(x)
            assert out.shape == x.shape
            assert adjacency.shape == (2, 16, 4)

    def test_conv_weights_pass_gradcheck(self):
        from fvig.gradcheck import grad_check

        cfg = micro_config()
        block = GrapherBlock(cfg, dilation=1, rng=np.random.default_rng(10))
        x = Tensor(np.random.default_rng(11).normal(size=(1, 16, 32)))
        w = Tensor(np.random.default_rng(12).normal(size=(1, 16, 32)))
        rng = np.random.default_rng(13)
        for attr in ("agg_weight", "update_weight"):
            original = getattr(block, attr)

            def chain(t):
                setattr(block, attr, t)
                return (block.forward(x)[0] * w).sum()

            try:
                idx = rng.choice(original.size, size=24, replace=False)
                report = grad_check(chain, original.data, tol=1e-4, indices=idx)
            finally:
                setattr(block, attr, original)
            assert report.passed, (attr, report)


class TestFfnBlock:
    def test_zero_weights_is_identity(self):
        cfg = micro_config()
        block = FfnBlock(cfg, rng=np.random.default_rng(14))
        for t in (block.w1, block.b1, block.w2, block.b2):
            t.data[:] = 0
        x = Tensor(np.random.default_rng(15).normal(size=(2, 16, 32)))
        np.testing.assert_array_equal(block.forward(x).data, x.data)

    def test_shape_preserved(self):
        block = FfnBlock(micro_config(), rng=np.random.default_rng(16))
        x = Tensor(np.random.default_rng(17).normal(size=(3, 16, 32)))
        assert block.forward(x).shape == x.shape

    def test_linears_pass_gradcheck(self):
        from fvig.gradcheck import grad_check

        block = FfnBlock(micro_config(), rng=np.random.default_rng(18))
        x = Tensor(np.random.default_rng(19).normal(size=(1, 16, 32)))
        w = Tensor(np.random.default_rng(20).normal(size=(1, 16, 32)))
        rng = np.random.default_rng(21)
        for attr in ("w1", "w2"):
            original = getattr(block, attr)

            def chain(t):
                setattr(block, attr, t)
                return (block.forward(x) * w).sum()

            try:
                idx = rng.choice(original.size, size=24, replace=False)
                report = grad_check(chain, original.data, tol=1e-4, indices=idx)
            finally:
                setattr(block, attr, original)
            assert report.passed, (attr, report)


class TestForward:
    def test_default_config_emits_nine_classes(self):
        model = FViGModel(ModelConfig(), rng=np.random.default_rng(22))
        logits = model.forward(np.random.default_rng(23).random((2, 3, 32, 32)))
        assert logits.shape == (2, 9)

    def test_softmax_of_logits_sums_to_one(self):
        model = FViGModel(micro_config(), rng=np.random.default_rng(24))
        logits = model.forward(np.random.default_rng(25).random((3, 3, 32, 32)))
        probs = softmax_lastdim(logits).data
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_patch_permutation_invariance_without_positional(self):
        cfg = micro_config(use_positional_embedding=False)
        model = FViGModel(cfg, rng=np.random.default_rng(26))
        rng = np.random.default_rng(27)
        image = rng.random((1, 3, 32, 32))
        perm = rng.permutation(16)
        permuted = np.empty_like(image)
        for dst, src in enumerate(perm):
            si, sj = divmod(int(src), 4)
            di, dj = divmod(dst, 4)
            permuted[:, :, di * 8 : (di + 1) * 8, dj * 8 : (dj + 1) * 8] = image[
                :, :, si * 8 : (si + 1) * 8, sj * 8 : (sj + 1) * 8
            ]
        a = model.forward(image).data
        b = model.forward(permuted).data
        assert np.abs(a - b).max() <= 1e-6

    def test_eval_mode_deterministic(self):
        model = FViGModel(micro_config(), rng=np.random.default_rng(28))
        image = np.random.default_rng(29).random((2, 3, 32, 32))
        np.testing.assert_array_equal(model.forward(image).data, model.forward(image).data)

    def test_same_seed_same_logits(self):
        image = np.random.default_rng(30).random((2, 3, 32, 32))
        a = FViGModel(micro_config(), rng=np.random.default_rng(31)).forward(image).data
        b = FViGModel(micro_config(), rng=np.random.default_rng(31)).forward(image).data
        np.testing.assert_array_equal(a, b)

    def test_zeroed_blocks_reduce_to_embed_pool_head(self):
        cfg = micro_config()
        model = FViGModel(cfg, rng=np.random.default_rng(32))
        for name, t in model.named_parameters():
            if name.startswith("blocks."):
                t.data[:] = 0
        image = np.random.default_rng(33).random((2, 3, 32, 32))
        logits = model.forward(image).data
        tokens = patchify(image, 8)
        embedded = tokens @ model.embed_weight.data + model.embed_bias.data + model.positional.data
        expected = embedded.mean(axis=1) @ model.head_weight.data + model.head_bias.data
        np.testing.assert_allclose(logits, expected, atol=1e-12)

    def test_adjacency_trace_collected_per_layer(self):
        model = FViGModel(micro_config(), rng=np.random.default_rng(34))
        collected = []
        model.forward(np.random.default_rng(35).random((1, 3, 32, 32)), adjacency_out=collected)
        assert len(collected) == 2
        assert all(adj.shape == (1, 16, 4) for adj in collected)


class TestCountParams:
    def test_single_linear_formula(self):
        cfg = micro_config()
        census = count_params(cfg)
        assert census["patch_embed"] == 3 * 8 * 8 * 32 + 32
        assert census["head"] == 32 * 3 + 3

    def test_census_matches_checkpoint_enumeration(self, tmp_path):
        cfg = micro_config()
        model = FViGModel(cfg, rng=np.random.default_rng(36))
        path = tmp_path / "m.fvig"
        model.save(path)
        _, arrays = load_checkpoint(path)
        assert count_params(cfg)["total"] == sum(a.size for a in arrays.values())

    def test_doubling_depth_doubles_block_subtotal(self):
        shallow = count_params(micro_config(dilation_schedule="1,2"))
        deep = count_params(micro_config(depth=4, dilation_schedule="1,2,1,2"))

        def block_subtotal(census):
            fixed = census["patch_embed"] + census["positional_embedding"] + census["head"]
            return census["total"] - fixed

        assert block_subtotal(deep) == 2 * block_subtotal(shallow)

    def test_flags_off_zero_out_saliency_and_cluster(self):
        census = count_params(micro_config(use_channel_saliency=False, use_spatial_saliency=False))
        assert census["channel_saliency"] == 0
        assert census["spatial_cluster"] == 0

    def test_state_dict_sizes(self):
        cfg = micro_config()
        model = FViGModel(cfg, rng=np.random.default_rng(37))
        assert sum(a.size for a in model.state_dict().values()) == count_params(cfg)["total"]


class TestCheckpointing:
    def test_roundtrip_preserves_forward_bits(self, tmp_path):
        cfg = micro_config()
        model = FViGModel(cfg, rng=np.random.default_rng(38))
        path = tmp_path / "m.fvig"
        model.save(path)
        loaded = FViGModel.load(path)
        image = np.random.default_rng(39).random((2, 3, 32, 32))
        np.testing.assert_array_equal(model.forward(image).data, loaded.forward(image).data)
        assert loaded.config == cfg

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "bad.fvig"
        path.write_bytes(b"NOPE" + b"\0" * 64)
        with pytest.raises(CheckpointError):
            FViGModel.load(path)

    def test_mismatched_arrays_rejected(self, tmp_path):
        model = FViGModel(micro_config(), rng=np.random.default_rng(40))
        arrays = model.state_dict()
        arrays.pop("head.bias")
        with pytest.raises(CheckpointError, match="head.bias"):
            model.load_state_dict(arrays)


class TestModelConfig:
    def test_text_roundtrip(self):
        cfg = micro_config(use_dilation=False, leaky_slope=0.15)
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            ModelConfig.from_text("flux_capacitance=1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad integer"):
            ModelConfig.from_text("depth=two\n")

    def test_validation_catches_bad_geometry(self):
        with pytest.raises(ConfigError, match="multiple"):
            micro_config(image_size=30).validate()
        with pytest.raises(ConfigError, match="exceeds"):
            micro_config(k=12, dilation_schedule="2,2").validate()
        with pytest.raises(ConfigError, match="divide"):
            micro_config(heads=5).validate()

    def test_dilation_disabled_forces_rate_one(self):
        cfg = micro_config(use_dilation=False, dilation_schedule="3,3")
        assert cfg.rates() == [1, 1]
