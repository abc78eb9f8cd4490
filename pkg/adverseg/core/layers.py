"""Differentiable layers with explicit forward/backward passes.

Each layer keeps its parameters, accumulated gradients, forward cache and
running buffers in a :class:`LayerState`. ``forward`` stores what ``backward``
needs; ``backward`` returns the gradient w.r.t. the layer input and adds
parameter gradients into ``state.grads``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Literal, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from adverseg.core.losses import CLAMP_HIGH, CLAMP_LOW
from adverseg.core.rng import Rng
from adverseg.core.tensor import DEFAULT_DTYPE, Tensor, pad2d
from adverseg.errors import DegenerateBatchError, ShapeError

logger = logging.getLogger("adverseg.layers")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

Init = Literal["he", "xavier"]


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        for name in ("in_channels", "out_channels", "kernel_size", "stride"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvSpec.{name} must be >= 1")
        if self.padding < 0:
            raise ShapeError("ConvSpec.padding must be >= 0")

    def output_size(self, size: int) -> int:
        """Spatial output size of the forward convolution."""
        out = (size + 2 * self.padding - self.kernel_size) // self.stride + 1
        if out < 1:
            raise ShapeError(
                f"input size {size} too small for kernel {self.kernel_size}, "
                f"stride {self.stride}, padding {self.padding}"
            )
        return out

    def transposed_size(self, size: int) -> int:
        """Spatial output size of the transposed convolution."""
        out = (size - 1) * self.stride - 2 * self.padding + self.kernel_size
        if out < 1:
            raise ShapeError(f"transposed output size {out} < 1 for input size {size}")
        return out


@dataclass
class LayerState:
    """Parameters, gradients, forward cache and running buffers of a layer."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    cache: dict[str, object] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def take(self, key: str):
        """Pop a cached forward value; backward without forward is an error."""
        try:
            return self.cache.pop(key)
        except KeyError:
            raise RuntimeError("backward called without a matching forward") from None


class Layer:
    """Base class: identity layer without parameters."""

    kind = "layer"

    def __init__(self) -> None:
        self.state = LayerState()

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.state.params

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return self.state.grads

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return self.state.buffers

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        return x

    def backward(self, grad: Tensor) -> Tensor:
        return grad

    def zero_grad(self) -> None:
        for g in self.state.grads.values():
            g.fill(0.0)

    def astype(self, dtype) -> "Layer":
        """Cast parameters and buffers in place; grads are reset."""
        for name, value in list(self.state.params.items()):
            self.state.add_param(name, value.astype(dtype))
        for name, value in list(self.state.buffers.items()):
            self.state.buffers[name] = value.astype(dtype)
        self.state.cache.clear()
        return self

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


# ---------------------------------------------------------------------------
# Convolution kernels shared by Conv2d and ConvTranspose2d.
# Weight layout is (out, in, k, k) for the forward convolution.


def _windows(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Strided (N, C, out_h, out_w, k, k) view of the padded input."""
    view = sliding_window_view(xp, (k, k), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :out_h, :out_w]


def conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation of ``x`` (N, C, H, W) with ``w`` (O, C, k, k), no bias."""
    n, c, h, wd = x.shape
    o, wc, k, _ = w.shape
    if c != wc:
        raise ShapeError(f"conv input has {c} channels, weights expect {wc}")
    spec = ConvSpec(c, o, k, stride, padding)
    out_h, out_w = spec.output_size(h), spec.output_size(wd)
    cols = _windows(pad2d(x, padding), k, stride, out_h, out_w)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv_input_grad(
    grad: np.ndarray, w: np.ndarray, stride: int, padding: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of :func:`conv_forward` w.r.t. its input."""
    n, o, out_h, out_w = grad.shape
    wo, c, k, _ = w.shape
    if o != wo:
        raise ShapeError(f"gradient has {o} channels, weights produce {wo}")
    h, wd = in_hw
    dcols = np.tensordot(grad, w, axes=([1], [0]))  # (N, out_h, out_w, C, k, k)
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=grad.dtype)
    h_span = stride * (out_h - 1) + 1
    w_span = stride * (out_w - 1) + 1
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + h_span : stride, j : j + w_span : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxp)


def conv_weight_grad(
    x: np.ndarray, grad: np.ndarray, kernel_size: int, stride: int, padding: int
) -> np.ndarray:
    """Gradient of :func:`conv_forward` w.r.t. its weights."""
    out_h, out_w = grad.shape[2], grad.shape[3]
    cols = _windows(pad2d(x, padding), kernel_size, stride, out_h, out_w)
    return np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))


def _init_bound(init: Init, fan_in: int, fan_out: int) -> float:
    if init == "he":
        return math.sqrt(6.0 / fan_in)
    return math.sqrt(6.0 / (fan_in + fan_out))


class Conv2d(Layer):
    """2-D cross-correlation with per-channel bias."""

    kind = "conv2d"

    def __init__(self, spec: ConvSpec, rng: Rng, init: Init = "he", dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        fan_out = spec.out_channels * k * k
        bound = _init_bound(init, fan_in, fan_out)
        shape = (spec.out_channels, spec.in_channels, k, k)
        self.state.add_param("weight", np.asarray(rng.uniform(-bound, bound, shape), dtype=dtype))
        self.state.add_param("bias", np.zeros(spec.out_channels, dtype=dtype))

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"conv2d expects [N, {self.spec.in_channels}, H, W], got {x.shape}"
            )
        s = self.spec
        out = conv_forward(x, self.params["weight"], s.stride, s.padding)
        self.state.cache["x"] = x
        return out + self.params["bias"][None, :, None, None]

    def backward(self, grad: Tensor) -> Tensor:
        x = self.state.take("x")
        s = self.spec
        self.grads["weight"] += conv_weight_grad(x, grad, s.kernel_size, s.stride, s.padding)
        self.grads["bias"] += grad.sum(axis=(0, 2, 3))
        return conv_input_grad(grad, self.params["weight"], s.stride, s.padding, x.shape[2:])

    def __repr__(self) -> str:
        s = self.spec
        return (
            f"Conv2d({s.in_channels}->{s.out_channels}, "
            f"k={s.kernel_size}, s={s.stride}, p={s.padding})"
        )


class ConvTranspose2d(Layer):
    """Transposed convolution, defined as the adjoint of :class:`Conv2d`.

    The weight has layout (in, out, k, k): read as a forward convolution it
    maps ``out`` channels to ``in`` channels, and this layer applies that
    convolution's input gradient.
    """

    kind = "conv_transpose2d"

    def __init__(self, spec: ConvSpec, rng: Rng, init: Init = "he", dtype=DEFAULT_DTYPE):
        super().__init__()
        self.spec = spec
        k = spec.kernel_size
        fan_in = spec.in_channels * k * k
        fan_out = spec.out_channels * k * k
        bound = _init_bound(init, fan_in, fan_out)
        shape = (spec.in_channels, spec.out_channels, k, k)
        self.state.add_param("weight", np.asarray(rng.uniform(-bound, bound, shape), dtype=dtype))
        self.state.add_param("bias", np.zeros(spec.out_channels, dtype=dtype))

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"conv_transpose2d expects [N, {self.spec.in_channels}, H, W], got {x.shape}"
            )
        s = self.spec
        out_hw = (s.transposed_size(x.shape[2]), s.transposed_size(x.shape[3]))
        out = conv_input_grad(x, self.params["weight"], s.stride, s.padding, out_hw)
        self.state.cache["x"] = x
        return out + self.params["bias"][None, :, None, None]

    def backward(self, grad: Tensor) -> Tensor:
        x = self.state.take("x")
        s = self.spec
        self.grads["weight"] += conv_weight_grad(grad, x, s.kernel_size, s.stride, s.padding)
        self.grads["bias"] += grad.sum(axis=(0, 2, 3))
        return conv_forward(grad, self.params["weight"], s.stride, s.padding)

    def __repr__(self) -> str:
        s = self.spec
        return (
            f"ConvTranspose2d({s.in_channels}->{s.out_channels}, k={s.kernel_size}, "
            f"s={s.stride}, p={s.padding})"
        )


class BatchNorm2d(Layer):
    """Per-channel batch normalization with learned scale and shift."""

    kind = "batchnorm2d"

    def __init__(
        self,
        channels: int,
        eps: float = BN_EPS,
        momentum: float = BN_MOMENTUM,
        dtype=DEFAULT_DTYPE,
    ):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.state.add_param("gamma", np.ones(channels, dtype=dtype))
        self.state.add_param("beta", np.zeros(channels, dtype=dtype))
        self.state.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.state.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm2d expects [N, {self.channels}, H, W], got {x.shape}")
        gamma = self.params["gamma"][None, :, None, None]
        beta = self.params["beta"][None, :, None, None]
        if train:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            if count < 2:
                raise DegenerateBatchError(
                    "batchnorm2d in train mode needs at least two values per channel"
                )
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if update_stats:
                m = self.momentum
                rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
                unbiased = var * (count / (count - 1))
                self.buffers["running_mean"] = ((1 - m) * rm + m * mean).astype(rm.dtype)
                self.buffers["running_var"] = ((1 - m) * rv + m * unbiased).astype(rv.dtype)
        else:
            count = 0
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self.state.cache["x_hat"] = x_hat
        self.state.cache["inv_std"] = inv_std
        self.state.cache["batch_stats"] = train
        return (x_hat * gamma + beta).astype(x.dtype)

    def backward(self, grad: Tensor) -> Tensor:
        x_hat = self.state.take("x_hat")
        inv_std = self.state.take("inv_std")
        batch_stats = self.state.take("batch_stats")
        gamma = self.params["gamma"]
        self.grads["gamma"] += (grad * x_hat).sum(axis=(0, 2, 3))
        self.grads["beta"] += grad.sum(axis=(0, 2, 3))
        dx_hat = grad * gamma[None, :, None, None]
        scale = inv_std[None, :, None, None]
        if not batch_stats:
            return (dx_hat * scale).astype(grad.dtype)
        mean_dx_hat = dx_hat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx_hat_xhat = (dx_hat * x_hat).mean(axis=(0, 2, 3), keepdims=True)
        return (scale * (dx_hat - mean_dx_hat - x_hat * mean_dx_hat_xhat)).astype(grad.dtype)

    def __repr__(self) -> str:
        return f"BatchNorm2d({self.channels})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        self.state.cache["mask"] = x > 0
        # NaN passes through.
        return np.maximum(x, 0).astype(x.dtype)

    def backward(self, grad: Tensor) -> Tensor:
        return np.where(self.state.take("mask"), grad, 0).astype(grad.dtype)


class Sigmoid(Layer):
    """Logistic activation; outputs are clipped to ``[CLAMP_LOW, CLAMP_HIGH]``."""

    kind = "sigmoid"

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        # float32 expit saturates to exactly 0 or 1 for |x| > ~17.
        out = np.clip(expit(x), CLAMP_LOW, CLAMP_HIGH).astype(x.dtype)
        self.state.cache["out"] = out
        return out

    def backward(self, grad: Tensor) -> Tensor:
        out = self.state.take("out")
        return grad * out * (1 - out)


class SoftmaxChannel(Layer):
    """Softmax over the channel axis of an [N, C, H, W] tensor."""

    kind = "softmax_channel"

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"softmax_channel expects [N, C, H, W], got {x.shape}")
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
        self.state.cache["out"] = out
        return out

    def backward(self, grad: Tensor) -> Tensor:
        out = self.state.take("out")
        return out * (grad - (grad * out).sum(axis=1, keepdims=True))


class MaxPool2d(Layer):
    """2x2 max pooling with stride 2; ties route to the first row-major position."""

    kind = "maxpool2d"

    def __init__(self, window: int = 2):
        super().__init__()
        self.window = window

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d expects [N, C, H, W], got {x.shape}")
        n, c, h, w = x.shape
        k = self.window
        if h % k or w % k:
            raise ShapeError(f"maxpool2d needs spatial dims divisible by {k}, got {h}x{w}")
        patches = (
            x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // k, w // k, k * k)
        )
        argmax = patches.argmax(axis=-1)
        self.state.cache["argmax"] = argmax
        self.state.cache["shape"] = x.shape
        return np.take_along_axis(patches, argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: Tensor) -> Tensor:
        argmax = self.state.take("argmax")
        n, c, h, w = self.state.take("shape")
        k = self.window
        routed = np.zeros((n, c, h // k, w // k, k * k), dtype=grad.dtype)
        np.put_along_axis(routed, argmax[..., None], grad[..., None], axis=-1)
        return np.ascontiguousarray(
            routed.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )


class GlobalAvgPool2d(Layer):
    """Mean over the spatial axes, keeping them as 1x1."""

    kind = "global_avg_pool2d"

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"global_avg_pool2d expects [N, C, H, W], got {x.shape}")
        self.state.cache["shape"] = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad: Tensor) -> Tensor:
        n, c, h, w = self.state.take("shape")
        return np.broadcast_to(grad / (h * w), (n, c, h, w)).astype(grad.dtype)


class Sequential(Layer):
    """Named chain of layers."""

    kind = "sequential"

    def __init__(self, *named: tuple[str, Layer]):
        super().__init__()
        self.layers: dict[str, Layer] = {}
        for name, layer in named:
            if name in self.layers:
                raise ValueError(f"duplicate layer name '{name}'")
            self.layers[name] = layer

    def named_layers(self, prefix: str = "") -> Iterator[tuple[str, Layer]]:
        for name, layer in self.layers.items():
            full = f"{prefix}{name}"
            if isinstance(layer, Sequential):
                yield from layer.named_layers(f"{full}.")
            else:
                yield full, layer

    def forward(self, x: Tensor, train: bool = True, update_stats: bool = True) -> Tensor:
        for layer in self.layers.values():
            x = layer.forward(x, train=train, update_stats=update_stats)
        return x

    def backward(self, grad: Tensor) -> Tensor:
        for layer in reversed(list(self.layers.values())):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self) -> None:
        for layer in self.layers.values():
            layer.zero_grad()

    def astype(self, dtype) -> "Sequential":
        for layer in self.layers.values():
            layer.astype(dtype)
        return self

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={layer!r}" for n, layer in self.layers.items())
        return f"Sequential({inner})"


def conv_block(
    spec: ConvSpec, rng: Rng, transposed: bool = False, dtype=DEFAULT_DTYPE
) -> Sequential:
    """conv -> batchnorm -> relu."""
    conv_cls = ConvTranspose2d if transposed else Conv2d
    return Sequential(
        ("conv", conv_cls(spec, rng, init="he", dtype=dtype)),
        ("bn", BatchNorm2d(spec.out_channels, dtype=dtype)),
        ("relu", ReLU()),
    )


def count_params(layer: Layer) -> int:
    if isinstance(layer, Sequential):
        return sum(count_params(child) for _, child in layer.named_layers())
    return sum(p.size for p in layer.params.values())


def describe(layer: Layer, name: Optional[str] = None) -> str:
    """One line per leaf layer, used for debug logging."""
    if isinstance(layer, Sequential):
        return "\n".join(f"{n}: {child!r}" for n, child in layer.named_layers())
    return f"{name or layer.kind}: {layer!r}"
