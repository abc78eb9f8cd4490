"""Tests for the Adam optimizer."""

import numpy as np
import pytest

from adverseg.core.models import build_generator
from adverseg.core.optim import Adam, AdamState, adam_step, global_norm
from adverseg.core.rng import Rng
from adverseg.errors import ConfigError, NonFiniteError


class TestAdamStep:
    """Tests for adam_step."""

    def test_scalar_first_step(self):
        params = {"theta": np.array([0.0])}
        state = AdamState()
        adam_step(params, {"theta": np.array([1.0])}, state)
        assert params["theta"][0] == pytest.approx(-1.0e-4, abs=1e-9)
        assert state.t == 1

    def test_zero_gradient_bit_identical(self):
        theta = np.array([0.3, -1.25, 7.0], dtype=np.float32)
        params = {"theta": theta.copy()}
        adam_step(params, {"theta": np.zeros(3, dtype=np.float32)}, AdamState())
        np.testing.assert_array_equal(params["theta"], theta)

    def test_non_finite_gradient_leaves_state(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = AdamState()
        with pytest.raises(NonFiniteError) as info:
            adam_step(params, {"a": np.ones(2), "b": np.array([1.0, np.inf])}, state)
        assert info.value.name == "b"
        assert state.t == 0
        assert state.m == {}
        np.testing.assert_array_equal(params["a"], 1.0)

    def test_moments_created_lazily(self):
        state = AdamState()
        adam_step({"w": np.zeros((2, 2))}, {"w": np.ones((2, 2))}, state)
        assert state.m["w"].shape == (2, 2)
        np.testing.assert_allclose(state.v["w"], 0.001)

    def test_clip_norm_scales(self):
        params = {"w": np.zeros(2)}
        state = AdamState()
        adam_step(params, {"w": np.array([30.0, 40.0])}, state, clip_norm=5.0)
        # clipped gradient is (3, 4)
        np.testing.assert_allclose(state.m["w"], [0.3, 0.4])

    def test_minimizes_quadratic(self):
        """f(theta) = theta**2 from theta = 1 at lr 1e-2."""
        params = {"theta": np.array([1.0])}
        state = AdamState(lr=1e-2)
        closest = 1.0
        for _ in range(5000):
            adam_step(params, {"theta": 2.0 * params["theta"]}, state)
            closest = min(closest, abs(float(params["theta"][0])))
        assert closest < 1e-2

    @pytest.mark.parametrize("magnitude", [1e-3, 1.0, 1e3])
    def test_step_size_bounded_by_lr(self, magnitude):
        rng = Rng(11)
        lr = 1e-2
        params = {"theta": np.array([0.5])}
        state = AdamState(lr=lr)
        for _ in range(50):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            before = float(params["theta"][0])
            adam_step(params, {"theta": np.array([sign * magnitude])}, state)
            assert abs(float(params["theta"][0]) - before) < 2 * lr

    def test_global_norm(self):
        assert global_norm([np.array([3.0]), np.array([4.0])]) == pytest.approx(5.0)

    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            AdamState(lr=-1.0)
        with pytest.raises(ConfigError):
            AdamState(beta1=1.0)


class TestAdam:
    """Tests for Adam bound to a network."""

    def test_step_changes_parameters(self, tiny_net):
        gen = build_generator(tiny_net, Rng(0))
        before = gen.state_arrays()
        x = np.asarray(Rng(1).uniform(0, 1, (2, 1, 16, 16)), dtype=np.float32)
        out = gen.forward(x)
        gen.backward(np.ones_like(out))
        opt = Adam(gen, lr=1e-2)
        opt.step()
        after = gen.state_arrays()
        assert not np.array_equal(before["head.conv.weight"], after["head.conv.weight"])
        assert opt.state.t == 1

    def test_lr_zero_freezes(self, tiny_net):
        gen = build_generator(tiny_net, Rng(0))
        before = {n: p.copy() for n, p, _ in gen.parameters()}
        for _, _, g in gen.parameters():
            g[...] = 1.0
        Adam(gen, lr=0.0).step()
        for name, param, _ in gen.parameters():
            np.testing.assert_array_equal(param, before[name])

    def test_zero_grad(self, tiny_net):
        gen = build_generator(tiny_net, Rng(0))
        for _, _, g in gen.parameters():
            g[...] = 2.0
        Adam(gen).zero_grad()
        assert all(np.all(g == 0) for _, _, g in gen.parameters())

    def test_negative_clip_norm(self, tiny_net):
        with pytest.raises(ConfigError):
            Adam(build_generator(tiny_net, Rng(0)), clip_norm=-1.0)
