"""Adam optimizer with bias correction."""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from adverseg.core.models import Network
from adverseg.errors import ConfigError, NonFiniteError

logger = logging.getLogger("adverseg.optim")


@dataclass
class AdamState:
    """Moments, step counter and hyperparameters of one Adam instance."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must be in [0, 1)")

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    clip_norm: float = 0.0,
) -> None:
    """One Adam update, in place.

    Every gradient is checked before anything is modified, so a non-finite
    gradient leaves parameters, moments and ``t`` untouched.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            expected = params[name].shape
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, expected {expected}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(name)

    scale = 1.0
    if clip_norm > 0:
        norm = global_norm(grads.values())
        if norm > clip_norm:
            scale = clip_norm / norm
            logger.debug("clipping gradient norm %.4g to %.4g", norm, clip_norm)

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, param in params.items():
        g = grads[name] * scale if scale != 1.0 else grads[name]
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param -= update.astype(param.dtype)


def zero_grads(grads: Iterable[np.ndarray]) -> None:
    for g in grads:
        g.fill(0.0)


class Adam:
    """Adam bound to the parameters of one network."""

    def __init__(
        self,
        net: Network,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float = 0.0,
    ):
        if clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0, got {clip_norm}")
        self.net = net
        self.clip_norm = clip_norm
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        params, grads = {}, {}
        for name, param, grad in self.net.parameters():
            params[name] = param
            grads[name] = grad
        adam_step(params, grads, self.state, self.clip_norm)

    def zero_grad(self) -> None:
        zero_grads(g for _, _, g in self.net.parameters())
