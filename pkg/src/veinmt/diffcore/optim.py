"""SGD with optional heavy-ball momentum."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .array import DTYPE, Array, ShapeError


def sgd_step(params: Sequence[Array], grads: Sequence[np.ndarray | None], lr: float,
             momentum: float = 0.0, velocity: list[np.ndarray] | None = None) -> None:
    """In-place ``p <- p - lr * v`` where ``v = momentum * v + g`` (``v = g`` without momentum).

    ``velocity`` holds one buffer per param and is updated in place; pass the
    same list across steps.
    """
    if not lr >= 0:
        raise ValueError(f"sgd_step: lr must be >= 0, got {lr}")
    if momentum and velocity is None:
        raise ValueError("sgd_step: momentum needs a velocity buffer list")
    lr32 = DTYPE(lr)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"sgd_step: grad shape {g.shape} != param shape {p.shape}")
        if momentum:
            v = velocity[i]
            v *= DTYPE(momentum)
            v += g
            step = v
        else:
            step = g
        if lr32 != 0:
            p.data -= lr32 * step


class SGD:
    def __init__(self, params: Sequence[Array], lr: float = 0.01, momentum: float = 0.9):
        if lr < 0:
            raise ValueError(f"SGD: lr must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, scale: float = 1.0) -> None:
        grads = [None if p.grad is None else (p.grad * DTYPE(scale) if scale != 1.0 else p.grad)
                 for p in self.params]
        sgd_step(self.params, grads, self.lr, self.momentum, self.velocity)

    def state(self) -> dict:
        return {"lr": self.lr, "momentum": self.momentum}
