"""Reverse-mode autodiff over float64 numpy arrays."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import NonFiniteError

# per thread, so bootstrap replicates can train side by side
_STATE = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (current thread only)."""
    prev = grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


def grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


class Tensor:
    """Array plus the recorded rule for pushing gradients to its inputs.

    ``grad_fn(g)`` receives the gradient of this tensor and returns one
    gradient (or None) per parent, in order.
    """

    __slots__ = ("data", "grad", "parents", "grad_fn", "requires_grad", "name", "_fixed_grad")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = ()
        self.grad_fn = None
        self.requires_grad = requires_grad
        self.name = name
        self._fixed_grad = False

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self._fixed_grad:
            self.grad[...] = 0.0
        else:
            self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad_fn is None:
                _accumulate_leaf(node, g)
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg

    # operator sugar; the op functions live in ops.py
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)


class Parameter(Tensor):
    """Leaf tensor whose data and grad are views into a flat buffer."""

    __slots__ = ()

    def __init__(self, data_view: np.ndarray, grad_view: np.ndarray, name=None):
        super().__init__(data_view, requires_grad=True, name=name)
        self.data = data_view
        self.grad = grad_view
        self._fixed_grad = True


def _accumulate_leaf(node: Tensor, g: np.ndarray):
    if node._fixed_grad:
        if g.shape != node.grad.shape:
            g = np.broadcast_to(g, node.grad.shape)
        node.grad += g
    elif node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad = node.grad + g


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: tuple, grad_fn) -> Tensor:
    """Wrap an op result, recording ``grad_fn`` when any parent needs grad."""
    # a NaN/Inf anywhere makes the sum non-finite; one reduction instead of two
    if not np.isfinite(data.sum()):
        raise NonFiniteError("non-finite value produced by " + getattr(grad_fn, "__qualname__", "op").split(".")[0])
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._fixed_grad = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.parents = parents
        out.grad_fn = grad_fn
        out.requires_grad = True
    else:
        out.parents = ()
        out.grad_fn = None
        out.requires_grad = False
    return out
