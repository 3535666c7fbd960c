"""Adaptive-moment optimizer and gradient clipping."""

from __future__ import annotations

import numpy as np

from .layers import ModelParams


def clip_grad_norm(params: ModelParams, max_norm: float) -> float:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    total = float(np.sqrt(sum(float((t.grad * t.grad).sum()) for t in params.values())))
    if np.isfinite(total) and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for t in params.values():
            t.grad = t.grad * scale
    return total


class Adam:
    def __init__(self, params: ModelParams, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * g * g
            t.data = t.data - self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
