import numpy as np
import pytest

from cvit.errors import ConfigurationError, DimensionError
from cvit.model import (
    CViTConfig, FLConfig, ViTConfig, count_parameters, cvit_forward, fl_forward, init_parameters,
    patchify_and_embed,
)
from cvit.nn import softmax
from cvit.tensor import Tensor

from conftest import tiny_config, whole_model_gradcheck


@pytest.fixture(scope="module")
def full_model():
    return init_parameters(CViTConfig(), seed=0).eval()


@pytest.fixture
def reduced():
    return init_parameters(CViTConfig.reduced(), seed=3)


class TestConfig:
    def test_fl_layout(self):
        fl = FLConfig()
        assert fl.num_convs == 17
        assert list(fl.stage_channels) == [32 * 2 ** i for i in range(5)]

    def test_vit_defaults(self):
        cfg = CViTConfig()
        assert (cfg.num_patches, cfg.seq_len, cfg.patch_dim) == (7, 8, 3584)
        assert (cfg.vit.embed_dim, cfg.vit.heads, cfg.vit.head_hidden) == (1024, 8, 2048)

    def test_bad_configs(self):
        with pytest.raises(ConfigurationError):
            ViTConfig(embed_dim=100, heads=8)
        with pytest.raises(ConfigurationError):
            CViTConfig(image_size=100)

    def test_round_trip_dict(self):
        cfg = CViTConfig.reduced(encoder_depth=1)
        assert CViTConfig.from_dict(cfg.to_dict()) == cfg


class TestFullScale:
    def test_fl_shape(self, full_model):
        assert fl_forward(full_model, np.ones((1, 3, 224, 224), np.float32)).shape == (1, 512, 7, 7)

    def test_wrong_extent(self, full_model):
        with pytest.raises(DimensionError):
            fl_forward(full_model, np.ones((1, 3, 112, 112), np.float32))

    def test_parameter_counts(self, full_model):
        c = count_parameters(full_model)
        assert 10_700_000 <= c["fl"] <= 10_920_000
        assert c["total"] == c["fl"] + c["vit"] == sum(t.size for t in full_model.parameters())
        assert c["vit"] == c["patch_embedding"] + c["tokens"] + c["encoder"] + c["head"]
        assert c["total"] == 41_798_466

    def test_stage5_conv_weights(self, full_model):
        stage5 = [full_model.params[f"fl.{i}.conv.weight"].size for i in range(13, 17)]
        assert sum(stage5) == 3 * 3 * 256 * 512 + 3 * (3 * 3 * 512 * 512) == 8_257_536

    def test_init_variance(self, full_model):
        checked = 0
        for name, t in full_model.named_parameters():
            if t.size < 10_000 or t.ndim < 2 or name.endswith("pos_embed"):
                continue
            fan_in = int(np.prod(t.shape[1:])) if t.ndim == 4 else t.shape[0]
            target = 2.0 / fan_in if t.ndim == 4 else 1.0 / fan_in
            assert abs(t.data.var() / target - 1) < 0.2, name
            checked += 1
        assert checked > 20


class TestReducedScale:
    def test_fl_shape(self, reduced):
        assert fl_forward(reduced, np.ones((2, 3, 32, 32), np.float32)).shape == (2, 128, 1, 1)

    def test_logits_shape_and_softmax(self, reduced, rng):
        logits = cvit_forward(reduced, rng.normal(size=(4, 3, 32, 32)).astype(np.float32))
        assert logits.shape == (4, 2)
        np.testing.assert_allclose(softmax(Tensor(logits.data.astype(np.float64))).data.sum(axis=1), 1.0)

    def test_zero_propagation(self, reduced, rng):
        for name, t in reduced.named_parameters():
            if name.startswith("fl.") and (name.endswith("conv.weight") or name.endswith("beta")
                                           or name.endswith("conv.bias")):
                t.data[:] = 0
        for st in reduced.bn_states.values():
            st.running_mean[:] = 0
        reduced.eval()
        out = fl_forward(reduced, rng.normal(size=(2, 3, 32, 32)).astype(np.float32))
        assert np.all(out.data == 0)

    def test_identical_inputs_identical_rows(self, reduced, rng):
        reduced.eval()
        x = np.repeat(rng.normal(size=(1, 3, 32, 32)).astype(np.float32), 2, axis=0)
        logits = cvit_forward(reduced, x).data
        np.testing.assert_array_equal(logits[0], logits[1])

    def test_permutation_equivariance(self, reduced, rng):
        reduced.eval()
        x = rng.normal(size=(5, 3, 32, 32)).astype(np.float32)
        perm = rng.permutation(5)
        np.testing.assert_allclose(cvit_forward(reduced, x[perm]).data, cvit_forward(reduced, x).data[perm],
                                   rtol=1e-5, atol=1e-6)

    def test_seed_determinism(self):
        a = init_parameters(CViTConfig.reduced(), seed=11)
        b = init_parameters(CViTConfig.reduced(), seed=11)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb and np.array_equal(ta.data, tb.data)

    def test_norm_init_exact(self, reduced):
        for name, t in reduced.named_parameters():
            if name.endswith("gamma"):
                assert np.all(t.data == 1.0)
            if name.endswith("beta"):
                assert np.all(t.data == 0.0)

    def test_counts_seed_invariant(self):
        cfg = CViTConfig.reduced()
        assert count_parameters(init_parameters(cfg, 1)) == count_parameters(init_parameters(cfg, 2))

    def test_zero_depth_additivity(self):
        cfg = CViTConfig.reduced(encoder_depth=0)
        c = count_parameters(cfg)
        assert c["encoder"] == 0
        assert c["total"] == c["fl"] + c["patch_embedding"] + c["tokens"] + c["head"]
        assert cvit_forward(init_parameters(cfg, 0), np.zeros((2, 3, 32, 32), np.float32)).shape == (2, 2)


class TestPatchify:
    def test_sequence_shape(self):
        model = init_parameters(tiny_config(image_size=224), seed=0)
        feats = Tensor(np.zeros((2, 4, 7, 7), np.float32))
        assert patchify_and_embed(feats, model).shape == (2, 8, 16)

    def test_zero_in_zero_out(self):
        model = init_parameters(tiny_config(image_size=224), seed=0)
        for name in ("vit.cls_token", "vit.pos_embed", "vit.patch.bias"):
            model.params[name].data[:] = 0
        out = patchify_and_embed(Tensor(np.zeros((1, 4, 7, 7), np.float32)), model)
        assert np.all(out.data == 0)

    def test_row_locality(self, rng):
        model = init_parameters(tiny_config(image_size=224), seed=0)
        a = rng.normal(size=(1, 4, 7, 7)).astype(np.float32)
        b = a.copy()
        b[:, :, 3, :] += 1.0  # only patch 3 differs
        ea = patchify_and_embed(Tensor(a), model).data
        eb = patchify_and_embed(Tensor(b), model).data
        same = [0] + [i + 1 for i in range(7) if i != 3]
        np.testing.assert_array_equal(ea[:, same], eb[:, same])
        assert not np.allclose(ea[:, 4], eb[:, 4])

    def test_patch_is_row_flattened_channel_major(self, rng):
        model = init_parameters(tiny_config(image_size=224), seed=0)
        feats = rng.normal(size=(1, 4, 7, 7))
        p = {k: t.data.astype(np.float64) for k, t in model.params.items()}
        out = patchify_and_embed(Tensor(feats.astype(np.float32)), model).data
        for i in range(7):
            token = feats[0, :, i, :].reshape(-1) @ p["vit.patch.weight"] + p["vit.patch.bias"]
            np.testing.assert_allclose(out[0, i + 1], token + p["vit.pos_embed"][i + 1], rtol=1e-4, atol=1e-5)
        np.testing.assert_allclose(out[0, 0], p["vit.cls_token"][0] + p["vit.pos_embed"][0], rtol=1e-6)

    def test_wrong_height(self):
        model = init_parameters(tiny_config(image_size=224), seed=0)
        with pytest.raises(DimensionError):
            patchify_and_embed(Tensor(np.zeros((1, 4, 6, 7), np.float32)), model)


def test_whole_model_gradients():
    errors = whole_model_gradcheck(seed=0, max_coords=2)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, (worst, errors[worst])
