"""Dense tensor with define-by-run reverse-mode differentiation.

A Tensor wraps a C-contiguous float32 array (float64 in gradient-check
mode); ops record parents and a backward closure on their outputs, so the
tape is rebuilt on every forward pass. ``backward()`` on a scalar loss
walks the tape in reverse topological order and accumulates ``grad``
arrays on every tensor that requires one.
"""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Input shapes are inconsistent with an operation's contract."""


class GraphError(RuntimeError):
    """backward() called on a tensor the tape cannot differentiate."""


_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def tracking(*tensors: "Tensor") -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"

    # -- graph ---------------------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss tensor is detached from the computation graph")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        # interior grads are per-pass scratch; only leaves accumulate
        for node in topo:
            if node._parents:
                node.grad = None
        ones = np.ones_like(self.data)
        self.grad = ones if self.grad is None else self.grad + ones
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operators (defined in terms of the op helpers below) ----------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def abs(self):
        return tabs(self)

    def sqrt(self):
        return tsqrt(self)


def _lift(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add gradient ``g`` into ``t.grad`` (creating it on first use)."""
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g), t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_factory) -> Tensor:
    """Wrap an op result; record the tape edge when any parent needs it."""
    out = Tensor(data)
    if tracking(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_factory(out)
    return out


# -- arithmetic --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data + b.data

    def bw(out):
        def run():
            accumulate(a, out.grad)
            accumulate(b, out.grad)
        return run

    return make_op(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data - b.data

    def bw(out):
        def run():
            accumulate(a, out.grad)
            accumulate(b, -out.grad)
        return run

    return make_op(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data * b.data

    def bw(out):
        def run():
            accumulate(a, out.grad * b.data)
            accumulate(b, out.grad * a.data)
        return run

    return make_op(out_data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data / b.data

    def bw(out):
        def run():
            accumulate(a, out.grad / b.data)
            accumulate(b, -out.grad * a.data / (b.data * b.data))
        return run

    return make_op(out_data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            accumulate(a, -out.grad)
        return run

    return make_op(-a.data, (a,), bw)


def tabs(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            accumulate(a, out.grad * np.sign(a.data))
        return run

    return make_op(np.abs(a.data), (a,), bw)


def tsqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)

    def bw(out):
        def run():
            accumulate(a, out.grad * (0.5 / root))
        return run

    return make_op(root, (a,), bw)


# -- reductions & shape ------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def run():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            accumulate(a, np.broadcast_to(g, a.data.shape))
        return run

    return make_op(out_data, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(out):
        def run():
            accumulate(a, out.grad.reshape(a.data.shape))
        return run

    return make_op(a.data.reshape(shape), (a,), bw)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing with gradient scatter."""
    out_data = a.data[key]

    def bw(out):
        def run():
            g = np.zeros_like(a.data)
            g[key] += out.grad
            accumulate(a, g)
        return run

    return make_op(np.ascontiguousarray(out_data), (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(out):
        def run():
            accumulate(a, out.grad @ b.data.T)
            accumulate(b, a.data.T @ out.grad)
        return run

    return make_op(out_data, (a, b), bw)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(out):
        def run():
            for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                accumulate(t, out.grad[tuple(idx)])
        return run

    return make_op(out_data, tuple(ts), bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def bw(out):
        def run():
            accumulate(a, out.grad)
        return run

    return make_op(out_data, (a,), bw)
