"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .array import Array, backward


def numeric_grad(fn: Callable[[], Array], x: Array, weights: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """d/dx of ``sum(fn() * weights)`` by central differences.

    The weighted sum is taken in float64 outside the engine so that only the
    op itself runs in float32; the step actually applied after float32
    rounding is used as the denominator.
    """
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + np.float32(eps)
        hi = flat[i]
        fp = np.sum(fn().data.astype(np.float64) * weights)
        flat[i] = orig - np.float32(eps)
        lo = flat[i]
        fm = np.sum(fn().data.astype(np.float64) * weights)
        flat[i] = orig
        gflat[i] = (fp - fm) / (float(hi) - float(lo))
    return g


def analytic_grads(fn: Callable[[], Array], inputs: Sequence[Array], weights: np.ndarray) -> list[np.ndarray]:
    from . import ops
    for x in inputs:
        x.grad = None
    out = fn()
    loss = ops.sum_(ops.mul(out, Array(weights)))
    backward(loss)
    return [np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64) for x in inputs]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Array], inputs: Sequence[Array], eps: float = 1e-3,
                    seed: int = 0) -> list[float]:
    """Relative error (norm-wise) of analytic vs numeric gradient for each input."""
    rng = np.random.default_rng(seed)
    with_grad = fn()
    weights = rng.uniform(-1.0, 1.0, size=with_grad.shape)
    analytic = analytic_grads(fn, inputs, weights)
    return [relative_error(a, numeric_grad(fn, x, weights, eps)) for a, x in zip(analytic, inputs)]
