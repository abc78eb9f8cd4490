"""Reconstruction and adversarial losses with analytic gradients.

Every function returns ``(value, grad)`` where ``grad`` is the derivative of
``value`` w.r.t. the probability (or score) tensor it was given. Probabilities
are clamped to ``[CLAMP_LOW, CLAMP_HIGH]`` before any logarithm; the gradient
is zero where the clamp is active.

Adversarial sign convention (``convention="minmax"``)::

    L_adv = -(1/N) * sum(log D(fake) + log(1 - D(real)))

The discriminator *maximizes* ``L_adv``, which drives ``D(fake) -> 0`` and
``D(real) -> 1``: D estimates the probability that a map is real. With
``convention="standard"`` the returned value is the usual GAN value
``(1/N) * sum(log D(real) + log(1 - D(fake)))``, also maximized by D.
In both cases the generator descends ``-(1/N) * sum(log D(fake))``.

``N`` is the pixel count ``N * H * W`` for the reconstruction loss and the
batch size for the adversarial terms.
"""

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from adverseg.errors import ConfigError, ShapeError

CLAMP_LOW = 1e-7
CLAMP_HIGH = 1.0 - 1e-7

Convention = Literal["minmax", "standard"]
ReconMode = Literal["bce", "categorical"]


@dataclass
class LossBreakdown:
    """Losses measured in one training step."""

    rec: float
    adv_d: float = 0.0
    adv_g: float = 0.0
    total_g: float = 0.0

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in asdict(self).values())

    def first_non_finite(self) -> str | None:
        """Name of the first non-finite term, if any."""
        for name, value in asdict(self).items():
            if not np.isfinite(value):
                return name
        return None


def clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, CLAMP_LOW, CLAMP_HIGH)


def _clamp_with_mask(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clamped = clamp(p)
    return clamped, (p >= CLAMP_LOW) & (p <= CLAMP_HIGH)


def reconstruction_loss(
    prob_map: np.ndarray, one_hot: np.ndarray, mode: ReconMode = "bce"
) -> tuple[float, np.ndarray]:
    """Per-pixel cross-entropy between a probability map and one-hot truth.

    ``bce`` sums binary cross-entropy over every class channel;
    ``categorical`` keeps only the ``y * log p`` term (for the softmax head).
    Both average over pixels, not over classes.
    """
    if prob_map.shape != one_hot.shape:
        raise ShapeError(f"prob_map {prob_map.shape} does not match one_hot {one_hot.shape}")
    if prob_map.ndim < 2:
        raise ShapeError(f"expected a channel axis at position 1, got shape {prob_map.shape}")
    n = prob_map.size // prob_map.shape[1]
    p, inside = _clamp_with_mask(prob_map)
    y = one_hot
    if mode == "bce":
        value = -np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)) / n
        grad = -(y / p - (1 - y) / (1 - p)) / n
    elif mode == "categorical":
        value = -np.sum(y * np.log(p)) / n
        grad = -(y / p) / n
    else:
        raise ConfigError(f"unknown reconstruction mode '{mode}'")
    return float(value), np.where(inside, grad, 0).astype(prob_map.dtype)


def _check_scores(d_fake: np.ndarray, d_real: np.ndarray) -> None:
    if d_fake.shape != d_real.shape:
        raise ShapeError(f"fake scores {d_fake.shape} and real scores {d_real.shape} differ")


def discriminator_loss(
    d_fake: np.ndarray, d_real: np.ndarray, convention: Convention = "minmax"
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Value the discriminator maximizes, with gradients w.r.t. both score sets."""
    _check_scores(d_fake, d_real)
    n = d_fake.shape[0]
    f, f_in = _clamp_with_mask(d_fake)
    r, r_in = _clamp_with_mask(d_real)
    if convention == "minmax":
        value = -np.sum(np.log(f) + np.log1p(-r)) / n
        g_fake = -1.0 / (n * f)
        g_real = 1.0 / (n * (1 - r))
    elif convention == "standard":
        value = np.sum(np.log(r) + np.log1p(-f)) / n
        g_fake = -1.0 / (n * (1 - f))
        g_real = 1.0 / (n * r)
    else:
        raise ConfigError(f"unknown loss convention '{convention}'")
    return float(value), (
        np.where(f_in, g_fake, 0).astype(d_fake.dtype),
        np.where(r_in, g_real, 0).astype(d_real.dtype),
    )


def generator_adversarial_loss(d_fake: np.ndarray) -> tuple[float, np.ndarray]:
    """``-(1/N) * sum(log D(fake))``; the generator descends it."""
    n = d_fake.shape[0]
    f, inside = _clamp_with_mask(d_fake)
    value = -np.sum(np.log(f)) / n
    grad = -1.0 / (n * f)
    return float(value), np.where(inside, grad, 0).astype(d_fake.dtype)


def total_generator_objective(adv_g: float, rec: float, lambda_rec: float) -> float:
    if lambda_rec < 0:
        raise ConfigError(f"lambda_rec must be >= 0, got {lambda_rec}")
    return adv_g + lambda_rec * rec
