"""SGD with momentum and AdamW over lists of :class:`Tensor` parameters."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import GradientError, Tensor


class Optimizer:
    kind = "base"

    def __init__(self, params: Iterable[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {weight_decay}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise GradientError(f"{len(missing)} parameter(s) have no gradient (first index {missing[0]})")
        self.step_count += 1
        for i, p in enumerate(self.params):
            self._update(i, p, p.grad.astype(p.dtype, copy=False))
        self.zero_grad()

    def _update(self, i: int, p: Tensor, g: np.ndarray) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """``v = momentum * v + g; p -= lr * v`` with L2 weight decay folded into ``g``."""

    kind = "sgd_momentum"

    def __init__(self, params, lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 0.0):
        super().__init__(params, lr, weight_decay)
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        if self.momentum:
            v = self.velocity[i]
            v *= self.momentum
            v += g
            g = v
        p.data -= (self.lr * g).astype(p.dtype, copy=False)


class AdamW(Optimizer):
    """Adam with decoupled weight decay."""

    kind = "adamw"

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.05):
        super().__init__(params, lr, weight_decay)
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.beta1, self.beta2, self.eps = b1, b2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p, g):
        t = self.step_count
        m, v = self.m[i], self.v[i]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        mhat = m / (1.0 - self.beta1**t)
        vhat = v / (1.0 - self.beta2**t)
        if self.weight_decay:
            p.data -= (self.lr * self.weight_decay * p.data).astype(p.dtype, copy=False)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype, copy=False)


def make_optimizer(kind: str, params, **kwargs) -> Optimizer:
    if kind in ("adamw", "adam"):
        return AdamW(params, **kwargs)
    if kind in ("sgd", "sgd_momentum"):
        return SGD(params, **kwargs)
    raise ValueError(f"unknown optimizer {kind!r}")
