"""Array type and the reverse-mode graph.

Every op builds one node: the output Array keeps references to its parent
Arrays and a closure mapping the output gradient to parent gradients.
``backward`` walks the nodes in exact reverse topological order and frees
them afterwards.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the offending dims."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class GraphError(RuntimeError):
    pass


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Disable graph recording in the current thread."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev


class Array:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_freed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.asarray(arr, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Array, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self._freed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Array":
        return Array(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Array(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; the actual ops live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _not_scalar(a: Array):
    raise ShapeError(f"item() needs a single-element array, got shape {a.shape}")


def as_array(x) -> Array:
    return x if isinstance(x, Array) else Array(x)


def check_finite(data: np.ndarray, op: str) -> None:
    # float64 sum: one pass, no bool temporary, overflow-safe for float32 inputs
    if not np.isfinite(np.sum(data, dtype=np.float64)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NonFiniteError(f"{op}: produced {bad} non-finite value(s) in output of shape {data.shape}")


def make_node(data: np.ndarray, parents: Sequence[Array], backward_fn: Callable, op: str) -> Array:
    """Wrap an op result, recording a graph node when any parent needs grads.

    ``backward_fn(g)`` must return one gradient (or None) per parent, each
    with the parent's shape.
    """
    check_finite(data, op)
    out = Array.__new__(Array)
    out.data = data if data.dtype == DTYPE and data.flags.c_contiguous else np.asarray(data, dtype=DTYPE, order="C")
    out.grad = None
    out.op = op
    out._freed = False
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def topo_order(root: Array) -> list[Array]:
    """Nodes reachable from root, parents before children (iterative DFS)."""
    order: list[Array] = []
    seen: set[int] = set()
    stack: list[tuple[Array, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Array) -> None:
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; the graph is freed afterwards.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._freed:
        raise GraphError("backward: graph already freed by a previous backward call")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not depend on any array with requires_grad")
    order = topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=DTYPE, copy=True)
            else:
                node.grad += g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"backward[{node.op}]: gradient shape {pg.shape} != input shape {p.shape}")
            prev = grads.get(id(p))
            if prev is None:
                grads[id(p)] = pg
            else:
                grads[id(p)] = prev + pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._freed = True
