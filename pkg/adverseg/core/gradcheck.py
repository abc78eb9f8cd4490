"""Central finite-difference gradient checks.

Relative error between an analytic gradient ``a`` and a numeric one ``n`` is
``||a - n|| / max(||a||, ||n||, REL_FLOOR)`` per tensor; a check reports the
worst tensor. Gradients that are identically zero (e.g. a conv bias feeding
batch norm) therefore compare on an absolute scale instead of amplifying
rounding noise.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from adverseg.core import layers as L
from adverseg.core import losses
from adverseg.core.rng import Rng
from adverseg.core.tensor import CHECK_DTYPE

logger = logging.getLogger("adverseg.gradcheck")

REL_FLOOR = 1e-6
LAYER_THRESHOLD = 1e-4
LOSS_THRESHOLD = 1e-6
MODEL_THRESHOLD = 1e-3
ADJOINT_THRESHOLD = 1e-10


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error of one tensor.

    This is the error measure behind every "max relative error" threshold: the
    maximum is taken across tensors, not across elements. A single wrong element
    still moves the ratio by its share of the tensor norm.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), REL_FLOOR)
    return diff / scale


def numeric_gradient(f: Callable[[], float], x: np.ndarray, epsilon: float) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + epsilon
        f_plus = f()
        flat[i] = original - epsilon
        f_minus = f()
        flat[i] = original
        out[i] = (f_plus - f_minus) / (2 * epsilon)
    return grad


def grad_check(
    layer: L.Layer,
    x: np.ndarray,
    epsilon: float = 1e-5,
    sink_weights: Optional[np.ndarray] = None,
    train: bool = True,
) -> float:
    """Worst relative error over the input and every parameter of ``layer``.

    The scalar sink is ``sum(sink_weights * layer(x))``; plain sum when no
    weights are given. Must run in 64-bit.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    if x.dtype != np.float64:
        raise ValueError("grad_check needs 64-bit inputs")
    x = x.copy()

    def sink() -> float:
        out = layer.forward(x, train=train, update_stats=False)
        layer_cache_clear(layer)
        w = 1.0 if sink_weights is None else sink_weights
        return float(np.sum(w * out))

    out = layer.forward(x, train=train, update_stats=False)
    weights = np.ones_like(out) if sink_weights is None else sink_weights
    layer.zero_grad()
    analytic_x = layer.backward(weights.astype(out.dtype))
    analytic = {name: g.copy() for name, g in iter_grads(layer)}

    worst = relative_error(analytic_x, numeric_gradient(sink, x, epsilon))
    for name, param in iter_params(layer):
        err = relative_error(analytic[name], numeric_gradient(sink, param, epsilon))
        logger.debug("grad_check %s.%s rel_err=%.3e", layer.kind, name, err)
        worst = max(worst, err)
    return worst


def iter_params(layer: L.Layer):
    if isinstance(layer, L.Sequential):
        for prefix, child in layer.named_layers():
            for name, p in child.params.items():
                yield f"{prefix}.{name}", p
    else:
        yield from layer.params.items()


def iter_grads(layer: L.Layer):
    if isinstance(layer, L.Sequential):
        for prefix, child in layer.named_layers():
            for name, g in child.grads.items():
                yield f"{prefix}.{name}", g
    else:
        yield from layer.grads.items()


def layer_cache_clear(layer: L.Layer) -> None:
    if isinstance(layer, L.Sequential):
        for _, child in layer.named_layers():
            child.state.cache.clear()
    else:
        layer.state.cache.clear()


def adjoint_error(rng: Rng) -> float:
    """Relative gap in <conv(w, x), y> == <x, conv_transpose(w, y)>."""
    spec = L.ConvSpec(3, 4, 3, stride=2, padding=1)
    conv = L.Conv2d(spec, rng, dtype=CHECK_DTYPE)
    tconv = L.ConvTranspose2d(L.ConvSpec(4, 3, 3, stride=2, padding=1), rng, dtype=CHECK_DTYPE)
    tconv.params["weight"][...] = conv.params["weight"]
    x = _normal(rng, (2, 3, 9, 9))
    y = _normal(rng, (2, 4, spec.output_size(9), spec.output_size(9)))
    lhs = float(np.sum(conv.forward(x) * y))
    rhs = float(np.sum(x * tconv.forward(y)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), REL_FLOOR)


@dataclass
class CheckResult:
    """Outcome of a single gradient check."""

    name: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.threshold

    def line(self) -> str:
        status = "OK  " if self.passed else "FAIL"
        return f"{status} {self.name:<28} rel_err={self.error:.3e} < {self.threshold:.0e}"


def _normal(rng: Rng, shape) -> np.ndarray:
    return np.asarray(rng.normal(0.0, 1.0, shape), dtype=CHECK_DTYPE)


def _probs(rng: Rng, shape) -> np.ndarray:
    return np.asarray(rng.uniform(0.05, 0.95, shape), dtype=CHECK_DTYPE)


def _one_hot(rng: Rng, n: int, c: int, h: int, w: int) -> np.ndarray:
    labels = np.array([rng.integers(0, c) for _ in range(n * h * w)]).reshape(n, h, w)
    return np.moveaxis(np.eye(c, dtype=CHECK_DTYPE)[labels], -1, 1)


def _away_from_zero(rng: Rng, shape, margin: float) -> np.ndarray:
    x = _normal(rng, shape)
    return np.where(x >= 0, x + margin, x - margin)


def _distinct(rng: Rng, shape) -> np.ndarray:
    size = int(np.prod(shape))
    return (np.asarray(rng.permutation(size), dtype=CHECK_DTYPE) / size).reshape(shape)


def _check_layer(layer: L.Layer, x: np.ndarray, rng: Rng, eps: float) -> float:
    out = layer.forward(x, update_stats=False)
    layer_cache_clear(layer)
    return grad_check(layer, x, eps, sink_weights=_normal(rng, out.shape))


def _function_error(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray, eps: float
) -> float:
    _, analytic = fn(x)
    numeric = numeric_gradient(lambda: fn(x)[0], x, eps)
    return relative_error(analytic, numeric)


def check_conv2d(rng: Rng, eps: float) -> float:
    layer = L.Conv2d(L.ConvSpec(2, 3, 3, stride=1, padding=1), rng, dtype=CHECK_DTYPE)
    layer.params["bias"][...] = _normal(rng, 3)
    return _check_layer(layer, _normal(rng, (1, 2, 5, 5)), rng, eps)


def check_conv_transpose2d(rng: Rng, eps: float) -> float:
    layer = L.ConvTranspose2d(L.ConvSpec(3, 2, 2, stride=2), rng, dtype=CHECK_DTYPE)
    layer.params["bias"][...] = _normal(rng, 2)
    return _check_layer(layer, _normal(rng, (1, 3, 3, 3)), rng, eps)


def check_batchnorm2d(rng: Rng, eps: float) -> float:
    layer = L.BatchNorm2d(3, dtype=CHECK_DTYPE)
    layer.params["gamma"][...] = 1.0 + 0.5 * _normal(rng, 3)
    layer.params["beta"][...] = _normal(rng, 3)
    return _check_layer(layer, _normal(rng, (2, 3, 3, 3)), rng, eps)


def check_relu(rng: Rng, eps: float) -> float:
    return _check_layer(L.ReLU(), _away_from_zero(rng, (2, 3, 4, 4), 10 * eps), rng, eps)


def check_sigmoid(rng: Rng, eps: float) -> float:
    return _check_layer(L.Sigmoid(), _normal(rng, (2, 3, 4, 4)), rng, eps)


def check_softmax_channel(rng: Rng, eps: float) -> float:
    return _check_layer(L.SoftmaxChannel(), _normal(rng, (2, 4, 3, 3)), rng, eps)


def check_maxpool2d(rng: Rng, eps: float) -> float:
    return _check_layer(L.MaxPool2d(), _distinct(rng, (2, 2, 4, 4)), rng, eps)


def check_global_avg_pool2d(rng: Rng, eps: float) -> float:
    return _check_layer(L.GlobalAvgPool2d(), _normal(rng, (2, 3, 4, 4)), rng, eps)


def check_reconstruction_loss(rng: Rng, eps: float) -> float:
    y = _one_hot(rng, 2, 3, 4, 4)
    return _function_error(lambda p: losses.reconstruction_loss(p, y), _probs(rng, y.shape), eps)


def check_categorical_loss(rng: Rng, eps: float) -> float:
    y = _one_hot(rng, 2, 3, 4, 4)
    return _function_error(
        lambda p: losses.reconstruction_loss(p, y, mode="categorical"), _probs(rng, y.shape), eps
    )


def check_discriminator_loss(rng: Rng, eps: float) -> float:
    fake, real = _probs(rng, (4, 1)), _probs(rng, (4, 1))

    def fake_term(f):
        value, (g_fake, _) = losses.discriminator_loss(f, real)
        return value, g_fake

    def real_term(r):
        value, (_, g_real) = losses.discriminator_loss(fake, r)
        return value, g_real

    return max(
        _function_error(fake_term, fake.copy(), eps),
        _function_error(real_term, real.copy(), eps),
    )


def check_generator_adversarial_loss(rng: Rng, eps: float) -> float:
    return _function_error(losses.generator_adversarial_loss, _probs(rng, (4, 1)), eps)


def check_generator(rng: Rng, eps: float) -> float:
    """End-to-end check of a depth-1 generator under the reconstruction loss."""
    from adverseg.core.models import NetConfig, build_generator

    cfg = NetConfig(in_channels=1, num_classes=2, encoder_channels=(4,))
    gen = build_generator(cfg, rng, dtype=CHECK_DTYPE)
    x = _normal(rng, (1, 1, 8, 8))
    target = _one_hot(rng, 1, 2, 8, 8)

    def sink() -> float:
        out = gen.forward(x, train=True, update_stats=False)
        gen.clear_cache()
        return losses.reconstruction_loss(out, target)[0]

    out = gen.forward(x, train=True, update_stats=False)
    _, g = losses.reconstruction_loss(out, target)
    gen.zero_grad()
    gen.backward(g)
    worst = 0.0
    for _, param, grad in gen.parameters():
        analytic = grad.copy()
        worst = max(worst, relative_error(analytic, numeric_gradient(sink, param, eps)))
    return worst


# name -> (check, threshold)
CHECKS: dict[str, tuple[Callable[[Rng, float], float], float]] = {
    "conv2d": (check_conv2d, LAYER_THRESHOLD),
    "conv_transpose2d": (check_conv_transpose2d, LAYER_THRESHOLD),
    "batchnorm2d": (check_batchnorm2d, LAYER_THRESHOLD),
    "relu": (check_relu, LAYER_THRESHOLD),
    "sigmoid": (check_sigmoid, LAYER_THRESHOLD),
    "softmax_channel": (check_softmax_channel, LAYER_THRESHOLD),
    "maxpool2d": (check_maxpool2d, LAYER_THRESHOLD),
    "global_avg_pool2d": (check_global_avg_pool2d, LAYER_THRESHOLD),
    "conv_adjoint": (lambda rng, eps: adjoint_error(rng), ADJOINT_THRESHOLD),
    "reconstruction_loss": (check_reconstruction_loss, LOSS_THRESHOLD),
    "categorical_loss": (check_categorical_loss, LOSS_THRESHOLD),
    "discriminator_loss": (check_discriminator_loss, LOSS_THRESHOLD),
    "generator_adversarial_loss": (check_generator_adversarial_loss, LOSS_THRESHOLD),
    "generator": (check_generator, MODEL_THRESHOLD),
}

_LEAF_LAYERS: tuple[type[L.Layer], ...] = (
    L.Conv2d,
    L.ConvTranspose2d,
    L.BatchNorm2d,
    L.ReLU,
    L.Sigmoid,
    L.SoftmaxChannel,
    L.MaxPool2d,
    L.GlobalAvgPool2d,
)


@contextmanager
def corrupted_backward(kind: Optional[str]) -> Iterator[None]:
    """Scale the backward pass of one layer class by 1.5 (negative control)."""
    if kind is None:
        yield
        return
    matches = [cls for cls in _LEAF_LAYERS if cls.kind == kind]
    if not matches:
        raise KeyError(f"unknown layer '{kind}'")
    cls = matches[0]
    original = cls.backward

    def scaled(layer, grad):
        return 1.5 * original(layer, grad)

    cls.backward = scaled
    try:
        yield
    finally:
        cls.backward = original


def run_suite(
    seed: int = 0,
    only: Optional[str] = None,
    epsilon: float = 1e-5,
    corrupt: Optional[str] = None,
) -> list[CheckResult]:
    """Run every gradient check (or just ``only``) in 64-bit.

    Each check draws from its own substream, so filtering does not change
    the inputs of the remaining checks.
    """
    if only is not None and only not in CHECKS:
        raise KeyError(f"unknown check '{only}'; valid: {', '.join(CHECKS)}")
    root = Rng(seed)
    results = []
    with corrupted_backward(corrupt):
        for index, (name, (check, threshold)) in enumerate(CHECKS.items()):
            if only is not None and name != only:
                continue
            result = CheckResult(name, check(root.substream(index), epsilon), threshold)
            logger.info(result.line())
            results.append(result)
    return results
