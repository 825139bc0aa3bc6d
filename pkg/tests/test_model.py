import numpy as np
import pytest

from ctcseq import autodiff as ad
from ctcseq.autodiff import Parameter, Tensor, finite_difference_check, no_grad
from ctcseq.data import normalize
from ctcseq.losses import combined_loss
from ctcseq.model import (
    AttentionRefiner,
    FeatureExtractor,
    ModelConfig,
    Recognizer,
    apply_attention,
    causal_mask,
    load_checkpoint,
    motion_prior,
    pool_matrix,
    save_checkpoint,
    sinusoidal_encoding,
)

TOY = ModelConfig(
    feat_channels=8,
    feat_grid=(6, 6),
    pooled_grid=(4, 4),
    embed_dim=8,
    encoder_layers=2,
    heads=2,
    ffn_hidden=16,
    num_classes=4,
)


def toy_frames(rng, t=3, size=24):
    return rng.random((t, 3, size, size))


class TestConfig:
    def test_heads_must_divide_embed(self):
        with pytest.raises(ValueError):
            ModelConfig(embed_dim=10, heads=3)

    def test_pooled_grid_bounded(self):
        with pytest.raises(ValueError):
            ModelConfig(feat_grid=(4, 4), pooled_grid=(5, 5))


class TestFeatureExtractor:
    def test_output_shape(self):
        model = Recognizer(TOY, seed=0)
        out = model.extractor(Tensor(toy_frames(np.random.default_rng(0))))
        assert out.shape == (3, 8, 6, 6)

    def test_zero_input_zero_maps(self):
        model = Recognizer(TOY, seed=0)
        out = model.extractor(Tensor(np.zeros((2, 3, 24, 24))))
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_too_small_input_rejected(self):
        model = Recognizer(TOY, seed=0)
        with pytest.raises(ValueError):
            model.extractor(Tensor(np.zeros((1, 3, 8, 8))))


class TestSpatialAttention:
    def test_zero_value_weight_gives_zero_maps(self):
        model = Recognizer(TOY, seed=0)
        model.spatial.w_v.data[...] = 0.0
        maps = model.spatial(Tensor(np.random.default_rng(0).random((2, 8, 6, 6))))
        assert np.array_equal(maps.data, np.zeros((2, 6, 6)))

    def test_negative_preactivations_blocked(self):
        model = Recognizer(TOY, seed=0)
        model.spatial.w_a.data[...] = -1.0
        maps = model.spatial(Tensor(np.abs(np.random.default_rng(0).random((1, 8, 6, 6)))))
        assert np.array_equal(maps.data, np.zeros((1, 6, 6)))

    def test_single_cell_hand_computation(self):
        model = Recognizer(TOY, seed=3)
        features = np.random.default_rng(1).normal(size=(1, 8, 6, 6))
        maps = model.spatial(Tensor(features))
        cell = features[0, :, 2, 5]
        hidden = np.maximum(cell @ model.spatial.w_a.data, 0.0)
        expected = np.maximum(hidden @ model.spatial.w_v.data, 0.0)[0]
        assert abs(maps.data[0, 2, 5] - expected) < 1e-12

    def test_nonnegative(self):
        model = Recognizer(TOY, seed=0)
        maps = model.spatial(Tensor(np.random.default_rng(5).normal(size=(4, 8, 6, 6))))
        assert np.all(maps.data >= 0.0)


class TestRefiner:
    def test_single_frame_depends_only_on_itself(self):
        model = Recognizer(TOY, seed=0)
        a = model.refiner(Tensor(np.random.default_rng(0).random((1, 6, 6))))
        b = model.refiner(Tensor(np.random.default_rng(0).random((1, 6, 6))))
        assert np.array_equal(a.data, b.data)

    def test_future_frames_cannot_leak(self):
        model = Recognizer(TOY, seed=0)
        rng = np.random.default_rng(1)
        maps = rng.random((5, 6, 6))
        base = model.refiner(Tensor(maps)).data
        bumped = maps.copy()
        bumped[4] += 1.0
        out = model.refiner(Tensor(bumped)).data
        assert np.array_equal(out[:4], base[:4])

    def test_window_limits_history(self):
        cfg = ModelConfig(**{**TOY.__dict__, "context_window": 2})
        model = Recognizer(cfg, seed=0)
        rng = np.random.default_rng(2)
        maps = rng.random((6, 6, 6))
        base = model.refiner(Tensor(maps)).data
        bumped = maps.copy()
        bumped[0] += 1.0  # frame 0 is outside frame 4's window {2,3,4}
        out = model.refiner(Tensor(bumped)).data
        assert np.array_equal(out[4], base[4])
        assert not np.array_equal(out[1], base[1])


class TestBlend:
    def test_pure_prior(self):
        model = Recognizer(TOY, seed=0)
        model.blend_raw.data[...] = 60.0  # sigmoid saturates to 1
        t = 2
        priors = np.random.default_rng(0).random((t, 6, 6))
        priors /= priors.reshape(t, -1).sum(axis=1)[:, None, None]
        out = model.blend_with_prior(Tensor(np.zeros((t, 6, 6))), priors)
        assert np.allclose(out.data, priors, atol=1e-12)

    def test_pure_attention_sums_to_one(self):
        model = Recognizer(TOY, seed=0)
        model.blend_raw.data[...] = -60.0
        priors = np.full((3, 6, 6), 1 / 36)
        out = model.blend_with_prior(Tensor(np.random.default_rng(1).normal(size=(3, 6, 6))), priors)
        assert np.allclose(out.data.reshape(3, -1).sum(axis=1), 1.0, atol=1e-12)

    def test_half_blend_hand_evaluation(self):
        cfg = ModelConfig(**{**TOY.__dict__, "feat_grid": (2, 2), "pooled_grid": (2, 2)})
        model = Recognizer(cfg, seed=0)
        model.blend_raw.data[...] = 0.0  # sigmoid(0) = 0.5
        refined = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        priors = np.full((1, 2, 2), 0.25)
        out = model.blend_with_prior(Tensor(refined), priors).data
        soft = np.exp(refined[0] - 3.0)
        soft /= soft.sum()
        assert np.allclose(out[0], 0.5 * 0.25 + 0.5 * soft, atol=1e-12)

    def test_unnormalized_prior_rejected(self):
        model = Recognizer(TOY, seed=0)
        with pytest.raises(ValueError):
            model.blend_with_prior(Tensor(np.zeros((1, 6, 6))), np.ones((1, 6, 6)))

    def test_maps_are_probability_maps(self):
        model = Recognizer(TOY, seed=0)
        rng = np.random.default_rng(3)
        priors = rng.random((4, 6, 6))
        priors /= priors.reshape(4, -1).sum(axis=1)[:, None, None]
        out = model.blend_with_prior(Tensor(rng.normal(size=(4, 6, 6))), priors).data
        assert np.all(out >= 0.0)
        assert np.allclose(out.reshape(4, -1).sum(axis=1), 1.0, atol=1e-9)


class TestApplyAttention:
    def test_uniform_map_scales_channels(self):
        rng = np.random.default_rng(0)
        features = Tensor(rng.normal(size=(2, 8, 6, 6)))
        maps = Tensor(np.full((2, 6, 6), 1 / 36))
        out = apply_attention(features, maps)
        assert np.allclose(out.data, features.data / 36, atol=1e-15)

    def test_one_hot_map_selects_cell(self):
        rng = np.random.default_rng(1)
        features = Tensor(rng.normal(size=(1, 8, 6, 6)))
        maps = np.zeros((1, 6, 6))
        maps[0, 3, 4] = 1.0
        out = apply_attention(features, Tensor(maps)).data
        assert np.array_equal(out[0, :, 3, 4], features.data[0, :, 3, 4])
        out[0, :, 3, 4] = 0.0
        assert np.array_equal(out, np.zeros_like(out))

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        features = rng.normal(size=(3, 4, 5, 5))
        maps = rng.random((3, 5, 5))
        out = apply_attention(Tensor(features), Tensor(maps)).data
        ref = np.empty_like(features)
        for t in range(3):
            for d in range(4):
                for y in range(5):
                    for x in range(5):
                        ref[t, d, y, x] = features[t, d, y, x] * maps[t, y, x]
        assert np.abs(out - ref).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            apply_attention(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.zeros((2, 5, 5))))


class TestPooling:
    def test_identity_when_sizes_match(self):
        assert np.array_equal(pool_matrix(6, 6), np.eye(6))

    def test_constant_map_preserved(self):
        x = Tensor(np.full((1, 2, 9, 9), 3.7))
        from ctcseq.model import adaptive_pool

        out = adaptive_pool(x, (4, 4))
        assert np.allclose(out.data, 3.7, atol=1e-12)

    def test_fourteen_to_nine_bin_table(self):
        mat = pool_matrix(14, 9)
        expected = [(0, 2), (1, 4), (3, 5), (4, 7), (6, 8), (7, 10), (9, 11), (10, 13), (12, 14)]
        for i, (start, end) in enumerate(expected):
            row = np.zeros(14)
            row[start:end] = 1.0 / (end - start)
            assert np.allclose(mat[i], row)

    def test_upsampling_rejected(self):
        with pytest.raises(ValueError):
            pool_matrix(4, 5)


class TestPositionalEncoding:
    def test_shape_and_range(self):
        pe = sinusoidal_encoding(10, 8)
        assert pe.shape == (10, 8)
        assert np.all(np.abs(pe) <= 1.0)

    def test_first_position_pattern(self):
        pe = sinusoidal_encoding(3, 6)
        assert np.allclose(pe[0, 0::2], 0.0)
        assert np.allclose(pe[0, 1::2], 1.0)

    def test_odd_dim_supported(self):
        pe = sinusoidal_encoding(4, 7)
        assert pe.shape == (4, 7)


class TestCausalMask:
    def test_plain_causal(self):
        m = causal_mask(4)
        assert np.all(m[np.triu_indices(4, 1)] < -1e8)
        assert np.all(m[np.tril_indices(4)] == 0.0)

    def test_windowed(self):
        m = causal_mask(6, window=2)
        assert m[5, 3] == 0.0
        assert m[5, 2] < -1e8


class TestFullModel:
    def test_logit_shape_contract(self):
        for t in (1, 3, 7):
            model = Recognizer(TOY, seed=0)
            dist = model.forward(normalize(toy_frames(np.random.default_rng(t), t=t)))
            assert dist.probs.shape == (t, TOY.num_classes + 1)

    def test_eval_mode_deterministic(self):
        model = Recognizer(TOY, seed=1)
        frames = normalize(toy_frames(np.random.default_rng(0), t=4))
        a = model.forward(frames).probs.data
        b = model.forward(frames).probs.data
        assert np.array_equal(a, b)

    def test_end_to_end_causality(self):
        rng = np.random.default_rng(3)
        model = Recognizer(TOY, seed=2)
        frames = toy_frames(rng, t=5)
        priors = motion_prior(frames, TOY.feat_grid)
        base = model.forward(normalize(frames), priors=priors).log_probs.data
        for t_cut in (2, 4):
            bumped = frames.copy()
            bumped[t_cut] = rng.random(frames.shape[1:])
            # keep earlier priors identical: motion at t_cut affects prior
            # rows >= t_cut only, which is allowed to change
            p2 = motion_prior(bumped, TOY.feat_grid)
            out = model.forward(normalize(bumped), priors=p2).log_probs.data
            assert np.array_equal(out[:t_cut], base[:t_cut])

    def test_row_sums(self):
        model = Recognizer(TOY, seed=5)
        dist = model.forward(normalize(toy_frames(np.random.default_rng(2))))
        assert np.allclose(dist.probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_training_mode_requires_rng(self):
        model = Recognizer(TOY, seed=0)
        with pytest.raises(ValueError):
            model.forward(normalize(toy_frames(np.random.default_rng(0))), training=True)

    @pytest.mark.parametrize(
        "group",
        ["extractor.conv1.weight", "spatial.w_a", "refiner.w_q", "blend_raw",
         "embed.weight", "layers.0.attn.w_o", "layers.1.norm2.gain", "classifier.weight"],
    )
    def test_gradient_check_spot_groups(self, group):
        rng = np.random.default_rng(11)
        model = Recognizer(TOY, seed=7)
        frames = toy_frames(rng, t=2)
        priors = motion_prior(frames, TOY.feat_grid)
        nf = normalize(frames)

        def f():
            dist = model.forward(nf, priors=priors)
            return combined_loss(dist, [0, 2], 0.1).node

        err = finite_difference_check(f, model.named_parameters()[group], 1e-5)
        assert err < 1e-4


class TestMotionPrior:
    def test_static_video_uniform(self):
        frames = np.full((4, 3, 12, 12), 0.5)
        priors = motion_prior(frames, (3, 3))
        assert np.allclose(priors, 1 / 9, atol=1e-12)

    def test_sums_to_one(self):
        frames = np.random.default_rng(0).random((5, 3, 16, 16))
        priors = motion_prior(frames, (4, 4))
        assert np.allclose(priors.reshape(5, -1).sum(axis=1), 1.0, atol=1e-9)
        assert np.all(priors >= 0.0)

    def test_motion_concentrates_mass(self):
        frames = np.zeros((2, 3, 16, 16))
        frames[1, :, :8, :8] = 1.0  # square appears in the top-left quadrant
        priors = motion_prior(frames, (4, 4))
        assert priors[1][:2, :2].sum() > 0.5
        assert np.allclose(priors[0], 1 / 16, atol=1e-12)


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        model = Recognizer(TOY, seed=9)
        frames = normalize(toy_frames(np.random.default_rng(1)))
        before = model.forward(frames).log_probs.data
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, extra={"note": "test"})
        loaded = load_checkpoint(path)
        after = loaded.forward(frames).log_probs.data
        assert np.array_equal(before, after)

    def test_truncated_payload_rejected(self, tmp_path):
        model = Recognizer(TOY, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"garbage!!")
        with pytest.raises(ValueError):
            load_checkpoint(path)
