"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when any operand requires a
gradient, records the operation that produced it.  Calling
:meth:`Tensor.backward` on a scalar walks that record in reverse topological
order and accumulates gradients into every leaf tensor's ``grad`` slot.

Every primitive below defines its backward rule as a closure that maps the
output gradient to one gradient per parent (``None`` for parents that do
not need one).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "as_tensor",
    "concat",
    "dropout",
    "layer_norm",
    "matmul",
    "max_over",
    "mse",
    "no_grad",
    "relu",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- backprop ------------------------------------------------------
    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} does not match {self.shape}")

        pending: dict[int, list] = {id(self): [grad, False]}
        for node in reversed(_toposort(self)):
            entry = pending.pop(id(node), None)
            if entry is None:
                continue
            g = entry[0].dense() if isinstance(entry[0], _Scatter) else entry[0]
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is not None and parent.requires_grad:
                    _accumulate(pending, id(parent), pg)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)


class _Scatter:
    """Gradient that is zero except at ``index``; materialized lazily."""

    __slots__ = ("index", "values", "shape", "dtype", "direct")

    def __init__(self, index, values, shape, dtype, direct):
        self.index, self.values, self.shape, self.dtype, self.direct = index, values, shape, dtype, direct

    def add_into(self, full: np.ndarray) -> None:
        if self.direct:
            full[self.index] += self.values
        else:
            np.add.at(full, self.index, self.values)

    def dense(self) -> np.ndarray:
        full = np.zeros(self.shape, dtype=self.dtype)
        self.add_into(full)
        return full


def _accumulate(pending: dict, key: int, g) -> None:
    # entries are [gradient, owned]; owned arrays may be updated in place
    entry = pending.get(key)
    if entry is None:
        pending[key] = [g, False]
        return
    cur, owned = entry
    if isinstance(cur, _Scatter):
        cur, owned = cur.dense(), True
    elif not owned:
        cur, owned = cur.copy(), True
    if isinstance(g, _Scatter):
        g.add_into(cur)
    else:
        cur += g
    entry[0], entry[1] = cur, owned


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _toposort(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.data.dtype != b.data.dtype:
        # python scalars adopt the tensor's precision
        if a.data.ndim == 0 and not a.requires_grad:
            a = Tensor(a.data.astype(b.data.dtype))
        elif b.data.ndim == 0 and not b.requires_grad:
            b = Tensor(b.data.astype(a.data.dtype))
    return a, b


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_check(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_check(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_check(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _broadcast_check(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return _result(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- reductions and shape ops --------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _result(out, (a,), lambda g: (np.transpose(g, inverse),))


def _scatter_is_safe(index) -> bool:
    """True when ``index`` cannot address the same element twice."""
    items = index if isinstance(index, tuple) else (index,)
    arrays = [i for i in items if not (i is None or i is Ellipsis or isinstance(i, (int, slice, np.integer)))]
    if not arrays:
        return True
    if len(arrays) > 1:
        return False
    arr = np.asarray(arrays[0])
    return arr.dtype == bool or np.unique(arr).size == arr.size


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    direct = _scatter_is_safe(index)

    def backward(g):
        return (_Scatter(index, g, a.shape, a.dtype, direct),)

    return _result(np.asarray(out), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"stack: incompatible shapes {shapes}") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(out, tuple(tensors), backward)


def max_over(a: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _result(np.squeeze(out, axis=axis), (a,), backward)


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim == 2:
        return _matmul_right_2d(a, b)
    if a.ndim == 2:
        return _matmul_left_2d(a, b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def _matmul_right_2d(a: Tensor, b: Tensor) -> Tensor:
    # (..., n, k) @ (k, m): fold the batch into rows so BLAS sees one large product
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
        gb = a2.T @ g2 if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def _matmul_left_2d(a: Tensor, b: Tensor) -> Tensor:
    # (n, k) @ (..., k, m): contract k against axis -2 of every batch entry
    out = np.moveaxis(np.tensordot(a.data, b.data, axes=([1], [b.ndim - 2])), 0, -2)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            batch_axes = [i for i in range(g.ndim) if i != g.ndim - 2]
            ga = np.tensordot(g, b.data, axes=(batch_axes, batch_axes))
        if b.requires_grad:
            gb = np.moveaxis(np.tensordot(a.data.T, g, axes=([1], [g.ndim - 2])), 0, -2)
        return ga, gb

    return _result(np.ascontiguousarray(out), (a, b), backward)


# -- nonlinearities -------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis {axis} of shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        ggamma = _unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gbeta = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``rng`` is None (eval mode) or ``p`` is 0."""
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n)

    def backward(g):
        return (g * 2.0 * diff / n, -g * 2.0 * diff / n)

    return _result(out, (pred, target), backward)
