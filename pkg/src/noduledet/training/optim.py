from __future__ import annotations

from typing import Mapping

import numpy as np

from ..nn import Tensor


def decays(name: str) -> bool:
    """Weight decay applies to conv weights only; norm affine terms and biases are exempt."""
    return not (name.endswith(".bias") or ".bn." in name)


class SGD:
    """Momentum SGD: ``v = m*v + g + wd*p``; ``p -= lr*v``."""

    def __init__(self, params: Mapping[str, Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 5e-4):
        if lr < 0 or momentum < 0 or weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be non-negative")
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        missing = [name for name, t in self.params.items() if t.grad is None]
        if missing:
            raise RuntimeError(f"sgd step without gradients for {len(missing)} parameters (e.g. {missing[0]}); call backward first")
        lr = np.float32(self.lr)
        m = np.float32(self.momentum)
        wd = np.float32(self.weight_decay)
        for name, t in self.params.items():
            v = self.velocity[name]
            v *= m
            v += t.grad
            if wd and decays(name):
                v += wd * t.data
            t.data -= lr * v

