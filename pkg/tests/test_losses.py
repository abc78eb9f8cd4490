"""Tests for reconstruction and adversarial losses."""

import math

import numpy as np
import pytest

from adverseg.core import losses
from adverseg.core.rng import Rng
from adverseg.errors import ConfigError, ShapeError


def _pixel(p, y):
    return np.array(p, dtype=np.float64).reshape(1, -1, 1, 1), np.array(
        y, dtype=np.float64
    ).reshape(1, -1, 1, 1)


class TestReconstructionLoss:
    """Tests for reconstruction_loss."""

    def test_single_pixel_half(self):
        value, _ = losses.reconstruction_loss(*_pixel([0.5], [1.0]))
        assert value == pytest.approx(0.6931, abs=1e-4)

    def test_perfect_prediction_near_zero(self):
        value, _ = losses.reconstruction_loss(*_pixel([1.0, 0.0], [1.0, 0.0]))
        assert 0.0 <= value < 1e-6

    def test_total_miss_is_finite(self):
        value, grad = losses.reconstruction_loss(*_pixel([0.0, 1.0], [1.0, 0.0]))
        assert math.isfinite(value)
        assert value == pytest.approx(-2 * math.log(1e-7), rel=1e-6)
        np.testing.assert_array_equal(grad, 0.0)

    def test_averages_over_pixels(self):
        p = np.full((2, 3, 4, 4), 0.5)
        y = np.zeros_like(p)
        y[:, 0] = 1.0
        value, _ = losses.reconstruction_loss(p, y)
        assert value == pytest.approx(3 * math.log(2))

    def test_categorical_mode(self):
        value, grad = losses.reconstruction_loss(*_pixel([0.25, 0.75], [0.0, 1.0]), "categorical")
        assert value == pytest.approx(-math.log(0.75))
        assert grad[0, 0, 0, 0] == 0.0

    @pytest.mark.parametrize("mode", ["bce", "categorical"])
    def test_spatial_permutation_invariant(self, mode):
        rng = Rng(4)
        prob = np.asarray(rng.uniform(0.05, 0.95, (2, 3, 4, 5)))
        truth = (np.asarray(rng.uniform(0.0, 1.0, (2, 3, 4, 5))) > 0.5).astype(np.float64)
        order = rng.permutation(20)

        def shuffle(a):
            return a.reshape(2, 3, 20)[..., order].reshape(2, 3, 4, 5)

        value, grad = losses.reconstruction_loss(prob, truth, mode)
        moved, moved_grad = losses.reconstruction_loss(shuffle(prob), shuffle(truth), mode)
        assert moved == pytest.approx(value, rel=1e-12)
        np.testing.assert_array_equal(moved_grad, shuffle(grad))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            losses.reconstruction_loss(np.ones((1, 2, 2, 2)), np.ones((1, 3, 2, 2)))

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            losses.reconstruction_loss(*_pixel([0.5], [1.0]), "dice")


class TestAdversarialLosses:
    """Tests for discriminator and generator adversarial terms."""

    def test_all_half_scores(self):
        half = np.full((4, 1), 0.5)
        value, _ = losses.discriminator_loss(half, half)
        assert value == pytest.approx(1.3863, abs=1e-4)

    def test_minmax_gradients(self):
        fake = np.array([[0.2], [0.4]])
        real = np.array([[0.6], [0.8]])
        _, (g_fake, g_real) = losses.discriminator_loss(fake, real)
        np.testing.assert_allclose(g_fake, -1.0 / (2 * fake))
        np.testing.assert_allclose(g_real, 1.0 / (2 * (1 - real)))

    def test_standard_convention(self):
        fake = np.array([[0.25]])
        real = np.array([[0.75]])
        value, _ = losses.discriminator_loss(fake, real, "standard")
        assert value == pytest.approx(2 * math.log(0.75))

    def test_unknown_convention(self):
        with pytest.raises(ConfigError):
            losses.discriminator_loss(np.ones((1, 1)) * 0.5, np.ones((1, 1)) * 0.5, "wgan")

    def test_batch_size_mismatch(self):
        with pytest.raises(ShapeError):
            losses.discriminator_loss(np.full((2, 1), 0.5), np.full((3, 1), 0.5))

    def test_saturated_scores_finite(self):
        value, (g_fake, g_real) = losses.discriminator_loss(np.zeros((2, 1)), np.ones((2, 1)))
        assert math.isfinite(value)
        assert np.all(g_fake == 0) and np.all(g_real == 0)

    def test_generator_gradient(self):
        d_fake = np.array([[0.1], [0.5], [0.9]])
        value, grad = losses.generator_adversarial_loss(d_fake)
        assert value == pytest.approx(-np.mean(np.log(d_fake)))
        np.testing.assert_allclose(grad, -1.0 / (3 * d_fake))


class TestObjective:
    def test_lambda_zero_is_adv_g(self):
        assert losses.total_generator_objective(0.37, 5.0, 0.0) == 0.37

    def test_weighting(self):
        assert losses.total_generator_objective(1.0, 0.5, 10.0) == pytest.approx(6.0)

    def test_negative_lambda(self):
        with pytest.raises(ConfigError):
            losses.total_generator_objective(1.0, 1.0, -1.0)

    def test_breakdown_first_non_finite(self):
        loss = losses.LossBreakdown(rec=1.0, adv_d=float("nan"), adv_g=float("inf"))
        assert not loss.is_finite()
        assert loss.first_non_finite() == "adv_d"
        assert losses.LossBreakdown(rec=0.5).is_finite()
