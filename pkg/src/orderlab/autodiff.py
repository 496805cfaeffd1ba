"""Minimal dense-array reverse-mode differentiation.

A Tensor wraps a float64 numpy array.  While a Tape is active (used as a
context manager), every primitive records itself in creation order;
``Tape.gradients`` replays the records strictly in reverse.  With no
active tape, the same primitives run as plain numpy, which is the cheap
evaluation path used by the sampler and the metrics.

Only the operations the compact sequence network needs are provided:
elementwise arithmetic with broadcasting, (batched) matmul, log, exp,
sigmoid, tanh, reductions, softmax / log-softmax / logsumexp over the
last axis, gather along the last axis, concat, reshape and an axis swap.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; carries both shapes."""

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: shapes {self.shape_a} and {self.shape_b} do not conform")


_ACTIVE_TAPES: list["Tape"] = []


def _active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    __slots__ = ("data", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = parents
        self._backward = backward
        tape = _active_tape()
        if tape is not None and backward is not None:
            tape._record(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def _record(self, node: Tensor):
        self._nodes.append(node)

    def gradients(self, loss: Tensor, wrt: list[Tensor]) -> list[np.ndarray]:
        """Adjoints of a scalar loss w.r.t. each tensor in wrt.

        Tensors the loss does not depend on get exactly-zero gradients.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node._backward(g, grads)
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accumulate(grads: dict, t: Tensor, g: np.ndarray):
    k = id(t)
    if k in grads:
        grads[k] = grads[k] + g
    else:
        grads[k] = g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to shape, undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, op, out, da, db):
    a, b = _wrap(a), _wrap(b)
    try:
        data = out(a.data, b.data)
    except ValueError as e:
        raise ShapeError(op, a.data.shape, b.data.shape) from e

    def backward(g, grads):
        _accumulate(grads, a, _unbroadcast(da(g, a.data, b.data), a.data.shape))
        _accumulate(grads, b, _unbroadcast(db(g, a.data, b.data), b.data.shape))

    return Tensor(data, (a, b), backward)


def add(a, b):
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def mul(a, b):
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(a, b, "div", lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def matmul(a, b):
    """Matrix product; supports 2-D operands and 3-D batches, with a 2-D
    right operand broadcast over the batch."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    data = a.data @ b.data

    def backward(g, grads):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(grads, a, _unbroadcast(ga, a.data.shape))
        _accumulate(grads, b, _unbroadcast(gb, b.data.shape))

    return Tensor(data, (a, b), backward)


def _unary(a, out, dout):
    a = _wrap(a)
    y = out(a.data)

    def backward(g, grads):
        _accumulate(grads, a, g * dout(a.data, y))

    return Tensor(y, (a,), backward)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def sigmoid(a):
    def f(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, f, lambda x, y: y * (1.0 - y))


def tanh(a):
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g, grads):
        if axis is None:
            _accumulate(grads, a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(grads, a, np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a):
    """Stable logsumexp over the last axis."""
    a = _wrap(a)
    m = np.max(a.data, axis=-1, keepdims=True)
    s = np.exp(a.data - m).sum(axis=-1, keepdims=True)
    data = (m + np.log(s))[..., 0]

    def backward(g, grads):
        soft = np.exp(a.data - m) / s
        _accumulate(grads, a, g[..., None] * soft)

    return Tensor(data, (a,), backward)


def softmax(a):
    """Softmax over the last axis, max-subtracted for stability."""
    a = _wrap(a)
    m = np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g, grads):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(grads, a, y * (g - dot))

    return Tensor(y, (a,), backward)


def log_softmax(a):
    a = _wrap(a)
    return a - logsumexp(a).reshape(a.data.shape[:-1] + (1,))


def gather_last(a, idx):
    """Pick one entry along the last axis: out[...] = a[..., idx[...]]."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.data.shape[:-1]:
        raise ShapeError("gather_last", a.data.shape, idx.shape)
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward(g, grads):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        _accumulate(grads, a, ga)

    return Tensor(data, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g, grads):
        offsets = np.cumsum([0] + sizes)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(grads, t, g[tuple(sl)])

    return Tensor(data, tuple(tensors), backward)


def _reshape(a: Tensor, shape):
    data = a.data.reshape(shape)

    def backward(g, grads):
        _accumulate(grads, a, g.reshape(a.data.shape))

    return Tensor(data, (a,), backward)


def swap_last_axes(a):
    a = _wrap(a)
    data = np.swapaxes(a.data, -1, -2)

    def backward(g, grads):
        _accumulate(grads, a, np.swapaxes(g, -1, -2))

    return Tensor(data, (a,), backward)


Tensor.reshape = _reshape
