"""Dense float64 tensors with a recorded graph for reverse-mode differentiation.

Every op in :mod:`drowsynet.nn.functional` returns a new :class:`Tensor` whose
``parents`` and ``backward_fn`` describe how to push an output gradient back to
its inputs.  The graph reachable from a loss is the tape; :func:`backward`
walks it in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when tensor extents do not conform; ``axis`` names the culprit."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference and feature extraction)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise DimensionError(f"empty extent in shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # arithmetic sugar, defined in functional to keep the op table in one place
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Iterable[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op output, recording the graph edge only if some input needs it."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.parents = parents if needs else ()
    out.backward_fn = backward_fn if needs else None
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Leaves not reachable from ``loss`` are left untouched (their ``grad`` stays
    ``None``); :func:`gradients` reports those as zeros.
    """
    if not loss.requires_grad:
        return
    if grad is None:
        if loss.data.size != 1:
            raise DimensionError("backward() without a seed gradient needs a scalar loss")
        grad = np.ones_like(loss.data)
    pending: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(_topo_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run :func:`backward` and return a gradient for every named parameter.

    Parameters with no path to ``loss`` receive zeros of matching shape.
    """
    for p in params.values():
        p.grad = None
    backward(loss)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
