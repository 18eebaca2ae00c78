"""
Optimisers, learning-rate schedule and gradient clipping.
"""

import math
from typing import List

import numpy as np

from ..core.layers import Parameter
from ..core.numerics import global_norm
from ..utils.utils import ValidationError


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    decoupled = False

    def __init__(self, params: List[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if not lr >= 0:
            raise ValidationError(f"learning rate must be non-negative, got {lr}")
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float = None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            grad = p.grad
            if self.weight_decay and not self.decoupled:
                grad = grad + self.weight_decay * p.value
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and self.decoupled:
                p.value -= lr * self.weight_decay * p.value
            p.value -= lr * update


class AdamW(Adam):
    """Adam with decoupled weight decay."""

    decoupled = True


class CosineSchedule:
    """Linear warmup from warmup_lr_init to base_lr, then cosine decay to min_lr."""

    def __init__(self, base_lr: float, total_steps: int, warmup_steps: int = 0,
                 warmup_lr_init: float = 0.0, min_lr: float = 0.0):
        self.base_lr = base_lr
        self.total_steps = max(1, total_steps)
        self.warmup_steps = max(0, warmup_steps)
        self.warmup_lr_init = warmup_lr_init
        self.min_lr = min_lr

    def __call__(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.warmup_lr_init + (self.base_lr - self.warmup_lr_init) * step / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(params: List[Parameter], max_norm: float) -> float:
    """Scale gradients so their global norm is at most max_norm; returns the norm before clipping."""
    norm = global_norm(p.grad for p in params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm
