import dataclasses

import numpy as np
import pytest

from dsrcnn.model import (
    ModelConfig,
    WeightFileError,
    build_model,
    forward,
    load_weights,
    predict,
    save_weights,
)
from dsrcnn.tensor import ShapeError, Tensor


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.block_channels == [8, 16, 32, 64, 64]
        assert cfg.convs_per_block == [2, 2, 3, 3, 3]
        assert cfg.rcl_T == 2 and cfg.dropout_ratio == 0.5

    def test_side_strides(self):
        assert ModelConfig.side_strides() == [1, 2, 4, 8, 16]

    @pytest.mark.parametrize("bad", [
        {"block_channels": [1, 2, 3, 4]},
        {"convs_per_block": [1, 1, 1, 1, 0]},
        {"rcl_T": -1},
        {"kernel_side": 4},
        {"dropout_ratio": 1.0},
    ])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            ModelConfig(**bad)


class TestBuild:
    def test_structure(self):
        model = build_model()
        assert [len(b) for b in model.blocks] == [2, 2, 3, 3, 3]
        assert [h.stride for h in model.side_heads] == [1, 2, 4, 8, 16]
        assert model.side_heads[0].upsample is None
        for head in model.side_heads:
            assert head.score.out_channels == 1
        for head in model.side_heads[1:]:
            assert head.upsample.kernel.shape[-1] == 2 * head.stride
        assert model.fusion.kernel.shape == (1, 5, 1, 1)

    def test_fusion_init(self, tiny_model):
        np.testing.assert_array_equal(tiny_model.fusion.kernel.data, 0.2)
        assert tiny_model.fusion.bias.data.item() == 0.0

    def test_same_seed_same_params(self, tiny_config):
        a, b = build_model(tiny_config).state(), build_model(tiny_config).state()
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_different_seed_differs(self, tiny_config):
        a = build_model(tiny_config).state()
        b = build_model(dataclasses.replace(tiny_config, seed=8)).state()
        assert not np.array_equal(a["block1.rcl1.ff.kernel"], b["block1.rcl1.ff.kernel"])

    def test_parameter_names_unique(self):
        names = [n for n, _ in build_model().named_parameters()]
        assert len(names) == len(set(names))


class TestForward:
    @pytest.mark.parametrize("size", [(16, 16), (37, 41), (64, 64), (101, 67), (17, 31)])
    def test_geometry(self, tiny_model, rng, size):
        result = forward(tiny_model, rng.random((1, 3, *size)))
        assert len(result.maps) == 6
        for m in result.maps:
            assert m.shape == (1, 1, *size)
            assert np.all((m.data > 0) & (m.data < 1))

    def test_rejects_small(self, tiny_model, rng):
        with pytest.raises(ShapeError, match="smaller"):
            forward(tiny_model, rng.random((1, 3, 15, 40)))

    def test_rejects_channel_mismatch(self, tiny_model, rng):
        with pytest.raises(ShapeError):
            forward(tiny_model, rng.random((1, 1, 16, 16)))

    def test_infer_deterministic(self, tiny_model, rng):
        image = rng.random((1, 3, 20, 24))
        a, b = forward(tiny_model, image), forward(tiny_model, image)
        for x, y in zip(a.maps, b.maps):
            np.testing.assert_array_equal(x.data, y.data)

    def test_train_mode_uses_dropout(self, tiny_model, rng):
        image = rng.random((1, 3, 16, 16))
        a = forward(tiny_model, image, train=True, rng=np.random.default_rng(0)).fused_map.data
        b = forward(tiny_model, image).fused_map.data
        assert not np.array_equal(a, b)

    def test_train_mode_needs_rng(self, tiny_model, rng):
        with pytest.raises(ValueError):
            forward(tiny_model, rng.random((1, 3, 16, 16)), train=True)

    def test_fresh_fusion_is_mean_of_sides(self, tiny_model, rng):
        result = forward(tiny_model, rng.random((1, 3, 16, 16)))
        mean = np.mean([s.data for s in result.side_scores], axis=0)
        np.testing.assert_allclose(result.fused_score.data, mean, atol=1e-14)
        np.testing.assert_allclose(result.fused_map.data, 1 / (1 + np.exp(-mean)), atol=1e-14)

    @pytest.mark.parametrize("m", range(5))
    def test_side_independence(self, tiny_config, rng, m):
        model = build_model(tiny_config)
        image = rng.random((1, 3, 18, 21))
        before = forward(model, image)
        head = model.side_heads[m]
        head.score.kernel.data = np.zeros_like(head.score.kernel.data)
        head.score.bias.data = np.zeros_like(head.score.bias.data)
        after = forward(model, image)
        np.testing.assert_array_equal(after.side_maps[m].data, 0.5)
        for j in range(5):
            if j != m:
                np.testing.assert_array_equal(after.side_maps[j].data, before.side_maps[j].data)

    def test_fusion_linearity(self, tiny_model, rng):
        image = rng.random((1, 3, 16, 16))
        base = forward(tiny_model, image)
        tiny_model.fusion.kernel.data[0, 2, 0, 0] *= 2
        doubled = forward(tiny_model, image)
        delta = doubled.fused_score.data - base.fused_score.data
        np.testing.assert_allclose(delta, 0.2 * base.side_scores[2].data, atol=1e-13)

    def test_predict_shape(self, tiny_model, rng):
        assert predict(tiny_model, rng.random((1, 3, 19, 23))).shape == (19, 23)


class TestWeights:
    def test_round_trip(self, tiny_model, rng, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(tiny_model, path)
        loaded = load_weights(path)
        assert loaded.config == tiny_model.config
        image = rng.random((1, 3, 16, 20))
        np.testing.assert_array_equal(predict(loaded, image), predict(tiny_model, image))
        save_weights(loaded, tmp_path / "again.bin")
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()

    def test_header(self, tiny_model, tmp_path):
        save_weights(tiny_model, tmp_path / "w.bin")
        assert (tmp_path / "w.bin").read_bytes()[:8] == b"DSRCNNW\x00"

    def test_truncated(self, tiny_model, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(tiny_model, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(WeightFileError, match="truncated"):
            load_weights(path)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "w.bin").write_bytes(b"not a weight file at all")
        with pytest.raises(WeightFileError, match="magic"):
            load_weights(tmp_path / "w.bin")

    def test_trailing_bytes(self, tiny_model, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(tiny_model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(WeightFileError, match="trailing"):
            load_weights(path)

    def test_mismatched_channels_names_block(self, tiny_config, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(build_model(tiny_config), path)
        other = dataclasses.replace(tiny_config, block_channels=[2, 2, 4, 3, 3])
        with pytest.raises(WeightFileError, match="block 3"):
            load_weights(path, other)

    def test_mismatched_depth_names_block(self, tiny_config, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(build_model(dataclasses.replace(tiny_config, convs_per_block=[1, 2, 1, 1, 1])), path)
        with pytest.raises(WeightFileError, match="block 2"):
            load_weights(path, tiny_config)
