"""Adam with decoupled weight decay, over a flat list of parameter tensors.

The decay is applied directly to the weights, outside the adaptive moment
scaling:  theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
A missing gradient counts as zero, so decay still applies to parameters a
batch did not touch.
"""

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError


class AdamW:
    def __init__(self, tensors, lr: float = 5e-4, weight_decay: float = 1e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0.0 or eps <= 0.0:
            raise ConfigError(f"lr {lr} and eps {eps} must be positive")
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError(f"betas must sit in [0, 1), got {betas}")
        if weight_decay < 0.0:
            raise ConfigError(f"negative weight decay {weight_decay}")
        self.tensors = [t for t in tensors if isinstance(t, Tensor)]
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for t, m, v in zip(self.tensors, self.m, self.v):
            g = t.grad if t.grad is not None else 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            t.data -= self.lr * (update + self.weight_decay * t.data)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None


def lr_schedule(epoch: int, base: float = 5e-4, decay_epoch: int = 30,
                factor: float = 0.1) -> float:
    """Constant base rate, dropped once at decay_epoch."""
    if epoch < 0:
        raise ConfigError(f"negative epoch {epoch}")
    return base if epoch < decay_epoch else base * factor
