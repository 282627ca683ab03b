"""A small reverse-mode autodiff over numpy arrays.

Every op records its parents and a backward closure on the output tensor;
:meth:`Tensor.backward` walks the recorded graph in reverse topological
order and accumulates gradients additively. Graph recording is skipped
inside :func:`no_grad` or when no input requires a gradient.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def _accumulate_at(self, index, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros(self.shape, dtype=DTYPE)
        if _needs_add_at(index):
            np.add.at(self.grad, index, g)
        else:
            self.grad[index] += g

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def _needs_add_at(index) -> bool:
    if isinstance(index, np.ndarray):
        return True
    if isinstance(index, tuple):
        return any(isinstance(i, np.ndarray) for i in index)
    return False


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return _result(y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _result(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _result(x.data * mask, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)

    def backward(g):
        x._accumulate(g * sign)

    return _result(np.abs(x.data), (x,), backward)


def square(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _result(x.data * x.data, (x,), backward)


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS = {"linear": identity, None: identity, "relu": relu, "tanh": tanh, "sigmoid": sigmoid}


# ---------------------------------------------------------------- reductions / shape


def sum_(x: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(x.data.sum(axis=axis), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T if b.ndim == 2 else np.multiply.outer(g, b.data))
        if b.requires_grad:
            if a.ndim == 1:
                b._accumulate(np.multiply.outer(a.data, g))
            else:
                b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        x._accumulate_at(index, g)

    return _result(x.data[index], (x,), backward)


def take_rows(x: Tensor, ids) -> Tensor:
    """Gather rows ``x[ids]``; the gradient scatter-adds back into ``x``."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(x.grad, ids, g)

    return _result(x.data[ids], (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(g[i])

    return _result(np.stack([t.data for t in tensors]), tensors, backward)


def reverse_rows(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g[::-1])

    return _result(x.data[::-1].copy(), (x,), backward)


def pad_rows_repeat(x: Tensor, n: int) -> Tensor:
    """Append ``n`` copies of the last row."""
    if n == 0:
        return x
    idx = np.concatenate([np.arange(len(x)), np.full(n, len(x) - 1)])
    return take_rows(x, idx)


# ---------------------------------------------------------------- layers as ops


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length 1-D convolution over time.

    ``x`` is ``[T, C_in]``, ``weight`` is ``[K, C_in, C_out]``. The input is
    edge-padded (first/last frame repeated) by ``(K - 1) // 2`` before and
    ``K // 2`` after, so a constant input stays constant.
    """
    k, c_in, c_out = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d expects {c_in} input channels, got {x.shape[1]}")
    t = x.shape[0]
    left = (k - 1) // 2
    padded = np.pad(x.data, ((left, k // 2), (0, 0)), mode="edge")
    cols = np.lib.stride_tricks.sliding_window_view(padded, k, axis=0)  # [T, C_in, K]
    cols = cols.transpose(0, 2, 1).reshape(t, k * c_in)
    w2 = weight.data.reshape(k * c_in, c_out)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            weight._accumulate((cols.T @ g).reshape(k, c_in, c_out))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if x.requires_grad:
            gcols = (g @ w2.T).reshape(t, k, c_in)
            gpad = np.zeros_like(padded)
            for j in range(k):
                gpad[j : j + t] += gcols[:, j]
            gx = gpad[left : left + t]
            gx[0] += gpad[:left].sum(axis=0)
            gx[-1] += gpad[left + t :].sum(axis=0)
            x._accumulate(gx)

    return _result(out, parents, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mean_, var_, eps: float = 1e-5) -> Tensor:
    """Normalize ``[T, C]`` per channel.

    With ``mean_``/``var_`` left as None the batch statistics over time are
    used (training); otherwise the given running statistics are constants.
    """
    if mean_ is None:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        batch_stats = True
    else:
        mu, var = mean_, var_
        batch_stats = False
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            if batch_stats:
                n = x.shape[0]
                gx = inv / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                gx = gx * inv
            x._accumulate(gx)

    return _result(out, (x, gamma, beta), backward)


def max_pool_time(x: Tensor, width: int = 2) -> Tensor:
    """Stride-1 max pool over time keeping length; the window runs forward and is truncated at the end."""
    t = x.shape[0]
    padded = np.pad(x.data, ((0, width - 1), (0, 0)), constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=0)  # [T, C, W]
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[..., None], axis=2)[..., 0]

    def backward(g):
        gx = np.zeros((t + width - 1, x.shape[1]))
        rows = np.arange(t)[:, None] + arg
        np.add.at(gx, (rows, np.broadcast_to(np.arange(x.shape[1]), rows.shape)), g)
        x._accumulate(gx[:t])

    return _result(out, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)
