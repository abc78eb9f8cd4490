"""Tests for generator and discriminator networks."""

import numpy as np
import pytest

from adverseg.core.models import (
    NetConfig,
    build_discriminator,
    build_generator,
    discriminator_input,
)
from adverseg.core.rng import Rng
from adverseg.errors import ConfigError, DataError, ShapeError


@pytest.fixture
def images():
    return np.asarray(Rng(0).uniform(0, 1, (2, 1, 16, 16)), dtype=np.float32)


class TestNetConfig:
    """Tests for NetConfig."""

    def test_defaults(self):
        cfg = NetConfig()
        assert cfg.depth == 3
        assert cfg.disc_in_channels == 3

    def test_conditional_input_channels(self):
        assert NetConfig(in_channels=3, conditional_disc=True).disc_in_channels == 6

    @pytest.mark.parametrize(
        "kwargs",
        [{"num_classes": 1}, {"encoder_channels": ()}, {"head": "tanh"}, {"in_channels": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            NetConfig(**kwargs)

    def test_spatial_divisibility(self):
        NetConfig().check_spatial(64, 64)
        with pytest.raises(ShapeError):
            NetConfig().check_spatial(60, 64)

    def test_dict_roundtrip(self):
        cfg = NetConfig(num_classes=4, skip_connections=True, head="softmax")
        assert NetConfig.from_dict(cfg.to_dict()) == cfg


class TestGenerator:
    """Tests for GeneratorNet."""

    def test_output_is_probability_map(self, tiny_net, images):
        gen = build_generator(tiny_net, Rng(1))
        out = gen.forward(images)
        assert out.shape == (2, 3, 16, 16)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_softmax_head_sums_to_one(self, images):
        cfg = NetConfig(encoder_channels=(4, 8), head="softmax")
        out = build_generator(cfg, Rng(1)).forward(images)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-5)

    def test_backward_shape(self, tiny_net, images):
        gen = build_generator(tiny_net, Rng(1))
        out = gen.forward(images)
        grad = gen.backward(np.ones_like(out))
        assert grad.shape == images.shape

    def test_skip_connections(self, images):
        cfg = NetConfig(encoder_channels=(4, 8), skip_connections=True)
        gen = build_generator(cfg, Rng(1))
        out = gen.forward(images)
        assert out.shape == (2, 3, 16, 16)
        assert gen.backward(np.ones_like(out)).shape == images.shape

    @pytest.mark.parametrize("height,width", [(4, 4), (8, 12), (16, 8), (20, 28)])
    def test_output_matches_input_size(self, tiny_net, height, width):
        gen = build_generator(tiny_net, Rng(1))
        x = np.asarray(Rng(6).uniform(0, 1, (2, 1, height, width)), dtype=np.float32)
        out = gen.forward(x, train=False, update_stats=False)
        assert out.shape == (2, 3, height, width)

    def test_saturated_head_stays_inside_unit_interval(self, tiny_net, images):
        gen = build_generator(tiny_net, Rng(1))
        dict(gen.named_layers())["head.conv"].params["bias"][...] = 20.0
        out = gen.forward(images)
        assert out.dtype == np.float32
        assert np.all((out > 0.0) & (out < 1.0))

    def test_indivisible_input(self, tiny_net):
        gen = build_generator(tiny_net, Rng(1))
        with pytest.raises(ShapeError):
            gen.forward(np.zeros((1, 1, 18, 16), dtype=np.float32))

    def test_wrong_channels(self, tiny_net):
        gen = build_generator(tiny_net, Rng(1))
        with pytest.raises(ShapeError):
            gen.forward(np.zeros((1, 3, 16, 16), dtype=np.float32))

    def test_same_seed_same_weights(self, tiny_net):
        a = build_generator(tiny_net, Rng(5)).state_arrays()
        b = build_generator(tiny_net, Rng(5)).state_arrays()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_parameter_names(self, tiny_net):
        names = [name for name, _, _ in build_generator(tiny_net, Rng(0)).parameters()]
        assert names[0] == "enc0.conv.weight"
        assert "head.conv.bias" in names

    def test_eval_mode_is_deterministic(self, tiny_net, images):
        gen = build_generator(tiny_net, Rng(1))
        a = gen.forward(images, train=False, update_stats=False)
        b = gen.forward(images, train=False, update_stats=False)
        np.testing.assert_array_equal(a, b)


class TestDiscriminator:
    """Tests for DiscriminatorNet."""

    def test_one_score_per_map(self, tiny_net):
        disc = build_discriminator(tiny_net, Rng(2))
        scores = disc.forward(np.full((3, 3, 16, 16), 0.5, dtype=np.float32))
        assert scores.shape == (3, 1)
        assert np.all((scores > 0) & (scores < 1))

    def test_backward_shape(self, tiny_net):
        disc = build_discriminator(tiny_net, Rng(2))
        x = np.asarray(Rng(3).uniform(0, 1, (2, 3, 16, 16)), dtype=np.float32)
        disc.forward(x)
        assert disc.backward(np.ones((2, 1), dtype=np.float32)).shape == x.shape

    def test_batch_order_does_not_matter(self, tiny_net):
        disc = build_discriminator(tiny_net, Rng(2))
        x = np.asarray(Rng(7).uniform(0, 1, (4, 3, 16, 16)), dtype=np.float32)
        perm = [2, 0, 3, 1]
        for train in (False, True):
            scores = disc.forward(x, train=train, update_stats=False)
            shuffled = disc.forward(x[perm], train=train, update_stats=False)
            np.testing.assert_allclose(shuffled, scores[perm], rtol=1e-5, atol=1e-6)

    def test_saturated_head_stays_inside_unit_interval(self, tiny_net):
        disc = build_discriminator(tiny_net, Rng(2))
        dict(disc.named_layers())["head.conv"].params["bias"][...] = 20.0
        scores = disc.forward(np.full((2, 3, 16, 16), 0.5, dtype=np.float32))
        assert np.all((scores > 0.0) & (scores < 1.0))

    def test_conditional_input(self, images):
        cfg = NetConfig(encoder_channels=(4, 8), disc_channels=(4,), conditional_disc=True)
        seg = np.zeros((2, 3, 16, 16), dtype=np.float32)
        stacked = discriminator_input(seg, images, cfg)
        assert stacked.shape == (2, 4, 16, 16)
        assert build_discriminator(cfg, Rng(0)).forward(stacked).shape == (2, 1)


class TestState:
    """Tests for state save and restore."""

    def test_roundtrip_includes_buffers(self, tiny_net, images):
        gen = build_generator(tiny_net, Rng(1))
        gen.forward(images)
        state = gen.state_arrays()
        assert "enc0.bn.running_mean" in state
        other = build_generator(tiny_net, Rng(99))
        other.load_state_arrays(state)
        np.testing.assert_array_equal(
            other.forward(images, train=False), gen.forward(images, train=False)
        )

    def test_missing_names(self, tiny_net):
        gen = build_generator(tiny_net, Rng(1))
        state = gen.state_arrays()
        del state["head.conv.bias"]
        with pytest.raises(DataError, match="head.conv.bias"):
            gen.load_state_arrays(state)

    def test_shape_mismatch(self, tiny_net):
        gen = build_generator(tiny_net, Rng(1))
        state = gen.state_arrays()
        state["head.conv.bias"] = np.zeros(7, dtype=np.float32)
        with pytest.raises(ShapeError):
            gen.load_state_arrays(state)
