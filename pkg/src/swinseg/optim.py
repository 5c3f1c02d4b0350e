"""SGD with momentum and L2 weight decay folded into the velocity."""

from __future__ import annotations

import numpy as np

from .config import SgdConfig
from .tensor import Tensor


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
             cfg: SgdConfig) -> tuple[np.ndarray, np.ndarray]:
    """One update: v <- m*v + (g + wd*p); p <- p - lr*v.  Returns (p, v)."""
    if grad.shape != param.shape:
        raise ValueError(f"grad shape {grad.shape} != param shape {param.shape}")
    v = cfg.momentum * velocity + (grad + cfg.weight_decay * param)
    return param - cfg.lr * v, v


class SGD:
    """Stateful wrapper applying :func:`sgd_step` to a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], cfg: SgdConfig):
        cfg.validate()
        self.params = params
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        for name, t in self.params.items():
            if t.grad is None:
                continue
            t.data, self.velocity[name] = sgd_step(
                t.data, t.grad, self.velocity[name], self.cfg)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
