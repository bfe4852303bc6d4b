"""Plain SGD with heavy-ball momentum and L2 weight decay in the gradient."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tape import Parameter


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """Update every parameter in place from its accumulated gradient.

    v <- momentum * v + (grad + weight_decay * value)   [decay only if decayable]
    value <- value - lr * v
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    for p in params:
        g = p.grad
        if weight_decay and p.decayable:
            g = g + weight_decay * p.data
        v = p.velocity if p.velocity is not None else np.zeros_like(p.data)
        v = momentum * v + g
        p.velocity = v
        p.data = p.data - lr * v
