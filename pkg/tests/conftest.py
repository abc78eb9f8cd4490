"""Shared fixtures for adverseg tests."""

import pytest

from adverseg.core.models import NetConfig
from adverseg.core.training import TrainConfig
from adverseg.data.models import AugmentPolicy, PhantomSpec
from adverseg.data.phantom import generate_dataset


@pytest.fixture
def tiny_net():
    """Depth-2 networks small enough for per-test training runs."""
    return NetConfig(
        in_channels=1, num_classes=3, encoder_channels=(4, 8), disc_channels=(4, 8)
    )


@pytest.fixture
def tiny_spec():
    return PhantomSpec(height=16, width=16, num_classes=3, seed=7)


@pytest.fixture
def tiny_samples(tiny_spec):
    return generate_dataset(tiny_spec, 10)


@pytest.fixture
def tiny_train_config(tiny_net):
    return TrainConfig(
        steps=4,
        batch_size=4,
        lr=1e-3,
        eval_every=2,
        seed=3,
        augment=AugmentPolicy(),
        net=tiny_net,
    )
