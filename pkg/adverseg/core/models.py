"""Generator (encoder-decoder) and discriminator networks."""

import logging
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np

from adverseg.core import layers as L
from adverseg.core.rng import Rng
from adverseg.core.tensor import DEFAULT_DTYPE, Tensor
from adverseg.errors import ConfigError, DataError, ShapeError

logger = logging.getLogger("adverseg.models")

Head = Literal["sigmoid", "softmax"]


@dataclass
class NetConfig:
    """Structure of the generator and discriminator."""

    in_channels: int = 1
    num_classes: int = 3
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    head: Head = "sigmoid"
    disc_channels: tuple[int, ...] = (16, 32, 64, 64)
    skip_connections: bool = False
    conditional_disc: bool = False

    def __post_init__(self) -> None:
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2 (background plus foreground)")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels needs at least one positive width")
        if not self.disc_channels or min(self.disc_channels) < 1:
            raise ConfigError("disc_channels needs at least one positive width")
        if self.head not in ("sigmoid", "softmax"):
            raise ConfigError(f"head must be 'sigmoid' or 'softmax', got '{self.head}'")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def disc_in_channels(self) -> int:
        extra = self.in_channels if self.conditional_disc else 0
        return self.num_classes + extra

    def check_spatial(self, height: int, width: int) -> None:
        """Raise unless both spatial dims are divisible by 2**depth."""
        factor = 2**self.depth
        if height % factor or width % factor:
            raise ShapeError(
                f"spatial size {height}x{width} is not divisible by {factor} "
                f"(encoder depth {self.depth})"
            )

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "encoder_channels": list(self.encoder_channels),
            "head": self.head,
            "disc_channels": list(self.disc_channels),
            "skip_connections": self.skip_connections,
            "conditional_disc": self.conditional_disc,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        return cls(
            in_channels=data["in_channels"],
            num_classes=data["num_classes"],
            encoder_channels=tuple(data["encoder_channels"]),
            head=data["head"],
            disc_channels=tuple(data["disc_channels"]),
            skip_connections=data.get("skip_connections", False),
            conditional_disc=data.get("conditional_disc", False),
        )


class Network:
    """Ordered collection of named layer blocks."""

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.blocks: dict[str, L.Layer] = {}

    def _add(self, name: str, layer: L.Layer) -> L.Layer:
        self.blocks[name] = layer
        return layer

    def named_layers(self) -> Iterator[tuple[str, L.Layer]]:
        """Leaf layers in construction order."""
        for name, block in self.blocks.items():
            if isinstance(block, L.Sequential):
                yield from block.named_layers(f"{name}.")
            else:
                yield name, block

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        """``(name, param, grad)`` in a stable order shared by optimizer and checkpoints."""
        for prefix, layer in self.named_layers():
            for name, param in layer.params.items():
                yield f"{prefix}.{name}", param, layer.grads[name]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for prefix, layer in self.named_layers():
            for name, buf in layer.buffers.items():
                yield f"{prefix}.{name}", buf

    def param_count(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def zero_grad(self) -> None:
        for _, layer in self.named_layers():
            layer.zero_grad()

    def clear_cache(self) -> None:
        for _, layer in self.named_layers():
            layer.state.cache.clear()

    def astype(self, dtype) -> "Network":
        for _, layer in self.named_layers():
            layer.astype(dtype)
        return self

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and running buffer, keyed by name."""
        out = {name: p.copy() for name, p, _ in self.parameters()}
        out.update((name, b.copy()) for name, b in self.named_buffers())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Restore parameters and buffers in place; names must match exactly."""
        expected = {name for name, _, _ in self.parameters()}
        expected.update(name for name, _ in self.named_buffers())
        missing = sorted(expected - arrays.keys())
        unexpected = sorted(arrays.keys() - expected)
        if missing or unexpected:
            raise DataError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for prefix, layer in self.named_layers():
            for name, param in layer.params.items():
                value = arrays[f"{prefix}.{name}"]
                if value.shape != param.shape:
                    raise ShapeError(
                        f"{prefix}.{name}: stored shape {value.shape} != {param.shape}"
                    )
                param[...] = value
            for name, buf in list(layer.buffers.items()):
                value = arrays[f"{prefix}.{name}"]
                if value.shape != buf.shape:
                    raise ShapeError(
                        f"{prefix}.{name}: stored shape {value.shape} != {buf.shape}"
                    )
                layer.buffers[name] = value.astype(buf.dtype, copy=True)

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        raise NotImplementedError

    def backward(self, grad: Tensor) -> Tensor:
        raise NotImplementedError

    def describe(self) -> str:
        return "\n".join(f"{name}: {layer!r}" for name, layer in self.named_layers())


class GeneratorNet(Network):
    """Encoder-decoder producing a per-pixel, per-class probability map.

    Encoder level ``i`` is conv3x3 -> bn -> relu followed by a 2x2 max pool;
    the bottleneck is one more conv block; decoder level ``i`` is a stride-2
    transposed conv -> bn -> relu. With ``skip_connections`` the pre-pool
    encoder features are concatenated onto the matching decoder output.
    """

    def __init__(self, cfg: NetConfig, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__(cfg)
        widths = cfg.encoder_channels
        prev = cfg.in_channels
        for i, width in enumerate(widths):
            spec = L.ConvSpec(prev, width, 3, stride=1, padding=1)
            self._add(f"enc{i}", L.conv_block(spec, rng, dtype=dtype))
            self._add(f"pool{i}", L.MaxPool2d())
            prev = width
        self._add("bottleneck", L.conv_block(L.ConvSpec(prev, prev, 3, 1, 1), rng, dtype=dtype))
        for i in reversed(range(cfg.depth)):
            spec = L.ConvSpec(prev, widths[i], 2, stride=2)
            self._add(f"dec{i}", L.conv_block(spec, rng, transposed=True, dtype=dtype))
            prev = widths[i] * (2 if cfg.skip_connections else 1)
        act = L.Sigmoid() if cfg.head == "sigmoid" else L.SoftmaxChannel()
        conv = L.Conv2d(L.ConvSpec(prev, cfg.num_classes, 1), rng, init="xavier", dtype=dtype)
        self._add("head", L.Sequential(("conv", conv), ("act", act)))

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"generator expects [N, {cfg.in_channels}, H, W], got {x.shape}")
        cfg.check_spatial(x.shape[2], x.shape[3])
        skips = []
        h = x
        for i in range(cfg.depth):
            h = self.blocks[f"enc{i}"].forward(h, train, update_stats)
            skips.append(h)
            h = self.blocks[f"pool{i}"].forward(h, train, update_stats)
        h = self.blocks["bottleneck"].forward(h, train, update_stats)
        for i in reversed(range(cfg.depth)):
            h = self.blocks[f"dec{i}"].forward(h, train, update_stats)
            if cfg.skip_connections:
                h = np.concatenate([h, skips[i]], axis=1)
        return self.blocks["head"].forward(h, train, update_stats)

    def backward(self, grad: Tensor) -> Tensor:
        cfg = self.cfg
        g = self.blocks["head"].backward(grad)
        skip_grads: dict[int, Tensor] = {}
        for i in range(cfg.depth):
            if cfg.skip_connections:
                width = cfg.encoder_channels[i]
                g, skip_grads[i] = g[:, :width], g[:, width:]
            g = self.blocks[f"dec{i}"].backward(np.ascontiguousarray(g))
        g = self.blocks["bottleneck"].backward(g)
        for i in reversed(range(cfg.depth)):
            g = self.blocks[f"pool{i}"].backward(g)
            if cfg.skip_connections:
                g = g + skip_grads[i]
            g = self.blocks[f"enc{i}"].backward(g)
        return g


class DiscriminatorNet(Network):
    """Stride-2 conv blocks, global average pool, 1x1 conv head and sigmoid.

    Emits one score per map, shaped ``[N, 1]``.
    """

    def __init__(self, cfg: NetConfig, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__(cfg)
        prev = cfg.disc_in_channels
        for i, width in enumerate(cfg.disc_channels):
            spec = L.ConvSpec(prev, width, 3, stride=2, padding=1)
            self._add(f"block{i}", L.conv_block(spec, rng, dtype=dtype))
            prev = width
        self._add("pool", L.GlobalAvgPool2d())
        conv = L.Conv2d(L.ConvSpec(prev, 1, 1), rng, init="xavier", dtype=dtype)
        self._add("head", L.Sequential(("conv", conv), ("act", L.Sigmoid())))

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        expected = self.cfg.disc_in_channels
        if x.ndim != 4 or x.shape[1] != expected:
            raise ShapeError(f"discriminator expects [N, {expected}, H, W], got {x.shape}")
        h = x
        for block in self.blocks.values():
            h = block.forward(h, train, update_stats)
        return h.reshape(x.shape[0], 1)

    def backward(self, grad: Tensor) -> Tensor:
        g = grad.reshape(grad.shape[0], 1, 1, 1)
        for block in reversed(list(self.blocks.values())):
            g = block.backward(g)
        return g


def build_generator(cfg: NetConfig, rng: Rng, dtype=DEFAULT_DTYPE) -> GeneratorNet:
    gen = GeneratorNet(cfg, rng, dtype=dtype)
    logger.debug("generator: %d parameters\n%s", gen.param_count(), gen.describe())
    return gen


def build_discriminator(cfg: NetConfig, rng: Rng, dtype=DEFAULT_DTYPE) -> DiscriminatorNet:
    disc = DiscriminatorNet(cfg, rng, dtype=dtype)
    logger.debug("discriminator: %d parameters\n%s", disc.param_count(), disc.describe())
    return disc


def discriminator_input(seg_map: Tensor, image: Tensor, cfg: NetConfig) -> Tensor:
    """Map fed to D: the segmentation alone, or stacked on the image when conditional."""
    if cfg.conditional_disc:
        return np.concatenate([seg_map, image.astype(seg_map.dtype)], axis=1)
    return seg_map
