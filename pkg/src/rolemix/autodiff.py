"""Minimal dense-tensor reverse-mode autodiff engine.

Tensors wrap numpy arrays (float32 by default, float64 for high-precision
gradient tests). Every differentiable op records a backward closure on its
output; ``backward()`` replays them in exact reverse topological order and
accumulates gradients into ``.grad`` slots. Broadcasting is restricted to a
leading-batch rule: in a binary op the smaller shape must be a trailing
suffix of the larger one.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# Every op kind the engine supports; the gradient-check suite iterates this.
OP_KINDS = frozenset(
    {
        "matmul",
        "add",
        "sub",
        "mul",
        "affine",
        "relu",
        "elu",
        "sigmoid",
        "tanh",
        "softmax",
        "log_softmax",
        "sum",
        "mean",
        "concat",
        "slice",
        "reshape",
        "take",
        "abs",
        "mse",
    }
)

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / target nets)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            # Keep the dtype of float arrays (so float64 nets stay float64);
            # lists, scalars and integer arrays default to float32.
            keep = isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating)
            dtype = data.dtype if keep else DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Parameters get a zeroed gradient slot up front; intermediates lazily.
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.name = self.name
        out._parents = ()
        out._backward = None
        out.op = "leaf"
        return out

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node.

        Visits the graph in exact reverse topological order; gradients
        accumulate, so callers zero parameter grads between steps.
        """
        if self.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        topo = _topo_order(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op!r})"


def constant(data, dtype=None, name=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype, name=name)


def parameter(data, name=None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def _topo_order(root: Tensor) -> list:
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += grad


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward=None) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype.name} vs {b.dtype.name}")


def _suffix_reduce(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over leading batch axes down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _binary_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    """Validate the leading-batch broadcast rule; return the output shape."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if len(sa) > len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform (leading-batch broadcast only)")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")
    _binary_broadcast(a, b, "add")
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                _accumulate(a, _suffix_reduce(out.grad, a.shape))
            if b.requires_grad:
                _accumulate(b, _suffix_reduce(out.grad, b.shape))
        out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "sub")
    _binary_broadcast(a, b, "sub")
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                _accumulate(a, _suffix_reduce(out.grad, a.shape))
            if b.requires_grad:
                _accumulate(b, _suffix_reduce(-out.grad, b.shape))
        out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "mul")
    _binary_broadcast(a, b, "mul")
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def backward():
            if a.requires_grad:
                _accumulate(a, _suffix_reduce(out.grad * b.data, a.shape))
            if b.requires_grad:
                _accumulate(b, _suffix_reduce(out.grad * a.data, b.shape))
        out._backward = backward
    return out


def affine(t: Tensor, scale: float, shift: float) -> Tensor:
    """Elementwise ``scale * t + shift`` with python scalars."""
    s = t.data.dtype.type(scale)
    c = t.data.dtype.type(shift)
    out = _make(t.data * s + c, (t,), "affine")
    if out.requires_grad:
        def backward():
            _accumulate(t, out.grad * s)
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    sa, sb = a.shape, b.shape
    if len(sa) < 2 or len(sb) < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {sa} @ {sb}")
    if sa[-1] != sb[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {sa} @ {sb}")
    if len(sb) == 2:
        pass  # (…, M, P) @ (P, Q)
    elif len(sa) == len(sb) and sa[:-2] == sb[:-2]:
        pass  # batched with identical leading dims
    else:
        raise ShapeError(f"matmul: unsupported batching for shapes {sa} @ {sb}")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                if b.data.ndim == 2 and a.data.ndim > 2:
                    ga = a.data.reshape(-1, sa[-1])
                    gg = g.reshape(-1, g.shape[-1])
                    _accumulate(b, ga.T @ gg)
                else:
                    _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)
        out._backward = backward
    return out


def relu(t: Tensor) -> Tensor:
    out = _make(np.maximum(t.data, 0), (t,), "relu")
    if out.requires_grad:
        def backward():
            _accumulate(t, out.grad * (t.data > 0))
        out._backward = backward
    return out


def elu(t: Tensor) -> Tensor:
    x = t.data
    y = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    out = _make(y.astype(x.dtype, copy=False), (t,), "elu")
    if out.requires_grad:
        def backward():
            local = np.where(x > 0, x.dtype.type(1), y + 1)
            _accumulate(t, out.grad * local)
        out._backward = backward
    return out


def sigmoid(t: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = t.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _make(y, (t,), "sigmoid")
    if out.requires_grad:
        def backward():
            _accumulate(t, out.grad * y * (1.0 - y))
        out._backward = backward
    return out


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    out = _make(y, (t,), "tanh")
    if out.requires_grad:
        def backward():
            _accumulate(t, out.grad * (1.0 - y * y))
        out._backward = backward
    return out


def _check_axis(t: Tensor, axis: int, op: str) -> int:
    if not -t.data.ndim <= axis < t.data.ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {t.shape}")
    axis %= t.data.ndim
    if t.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} has zero length in shape {t.shape}")
    return axis


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilised softmax along ``axis``."""
    axis = _check_axis(t, axis, "softmax")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _make(y, (t,), "softmax")
    if out.requires_grad:
        def backward():
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(t, y * (g - dot))
        out._backward = backward
    return out


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(t, axis, "log_softmax")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = _make(y, (t,), "log_softmax")
    if out.requires_grad:
        def backward():
            g = out.grad
            soft = np.exp(y)
            _accumulate(t, g - soft * g.sum(axis=axis, keepdims=True))
        out._backward = backward
    return out


def reduce_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _check_axis(t, axis, "sum")
    out = _make(t.data.sum(axis=axis, keepdims=keepdims), (t,), "sum")
    if out.requires_grad:
        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(t, np.broadcast_to(g, t.shape))
        out._backward = backward
    return out


def mean_all(t: Tensor) -> Tensor:
    n = t.data.dtype.type(t.size)
    out = _make(t.data.mean(dtype=t.dtype), (t,), "mean")
    if out.requires_grad:
        def backward():
            _accumulate(t, np.full(t.shape, out.grad / n, dtype=t.dtype))
        out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} invalid for shape {tensors[0].shape}")
    axis %= ndim
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or other[:axis] + other[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise ShapeError(
                f"concat: shape {t.shape} incompatible with {tensors[0].shape} on axis {axis}"
            )
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * ndim
                    idx[axis] = slice(lo, hi)
                    _accumulate(t, out.grad[tuple(idx)])
        out._backward = backward
    return out


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _check_axis(t, axis, "slice")
    if not 0 <= start <= stop <= t.shape[axis]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of shape {t.shape}")
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = _make(t.data[idx].copy(), (t,), "slice")
    if out.requires_grad:
        def backward():
            g = np.zeros_like(t.data)
            g[idx] = out.grad
            _accumulate(t, g)
        out._backward = backward
    return out


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != t.size:
        raise ShapeError(f"reshape: cannot view {t.shape} as {shape}")
    out = _make(t.data.reshape(shape), (t,), "reshape")
    if out.requires_grad:
        def backward():
            _accumulate(t, out.grad.reshape(t.shape))
        out._backward = backward
    return out


def take(t: Tensor, index: np.ndarray) -> Tensor:
    """Select one entry per row along the last axis (q-value gather)."""
    idx = np.asarray(index)
    if idx.shape != t.shape[:-1]:
        raise ShapeError(f"take: index shape {idx.shape} must equal {t.shape[:-1]}")
    expanded = idx[..., None]
    out_data = np.take_along_axis(t.data, expanded, axis=-1)[..., 0]
    out = _make(out_data, (t,), "take")
    if out.requires_grad:
        def backward():
            g = np.zeros_like(t.data)
            np.put_along_axis(g, expanded, out.grad[..., None], axis=-1)
            _accumulate(t, g)
        out._backward = backward
    return out


def absolute(t: Tensor) -> Tensor:
    out = _make(np.abs(t.data), (t,), "abs")
    if out.requires_grad:
        def backward():
            _accumulate(t, out.grad * np.sign(t.data))
        out._backward = backward
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    _check_same_dtype(a, b, "mse")
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = a.data.dtype.type(a.size)
    out = _make(np.asarray((diff * diff).mean(dtype=a.dtype)), (a, b), "mse")
    if out.requires_grad:
        def backward():
            g = out.grad * 2.0 * diff / n
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, -g)
        out._backward = backward
    return out


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
