"""Adam with L2-coupled weight decay."""

from __future__ import annotations

from typing import Iterable, Sequence

import numba
import numpy as np

from .tensor import Parameter


@numba.njit(cache=True)
def _adam_kernel(value, grad, m, v, lr, weight_decay, beta1, beta2, eps, c1, c2):
    # value, grad, m, v are flat views; grad is zeroed in the same pass
    for i in range(value.size):
        g = grad[i] + weight_decay * value[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        value[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
        grad[i] = 0.0


def adam_step(params: Iterable[Parameter], lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; zeroes every gradient accumulator afterwards.

    Weight decay is added to the gradient (``grad += weight_decay * value``)
    before the moment updates.
    """
    for p in params:
        p.step += 1
        _adam_kernel(p.data.reshape(-1), p.grad.reshape(-1), p.m.reshape(-1), p.v.reshape(-1),
                     lr, weight_decay, beta1, beta2, eps, 1.0 - beta1 ** p.step, 1.0 - beta2 ** p.step)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.weight_decay, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
