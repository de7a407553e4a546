"""Differentiable primitives over :class:`Tensor`.

Each primitive computes its value eagerly and, when a tape is active and an
input requires gradients, records a vector-Jacobian product. Broadcasting
follows numpy; gradients are summed back to each input's shape.
"""

import numpy as np

from .. import kernels
from .tensor import ShapeError, as_tensor, record


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    fwd = np.add
    return record("add", (a, b), fwd(a.values, b.values),
                  lambda: lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), fwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    fwd = np.subtract
    return record("sub", (a, b), fwd(a.values, b.values),
                  lambda: lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), fwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    fwd = np.multiply
    return record("mul", (a, b), fwd(av, bv),
                  lambda: lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), fwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    fwd = np.divide
    return record("div", (a, b), fwd(av, bv),
                  lambda: lambda g: (_unbroadcast(g / bv, a.shape),
                                     _unbroadcast(-g * av / (bv * bv), b.shape)), fwd)


def neg(a):
    a = as_tensor(a)
    return record("neg", (a,), -a.values, lambda: lambda g: (-g,), np.negative)


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    av = a.values

    def fwd(x):
        return np.power(x, p)

    return record("power", (a,), fwd(av), lambda: lambda g: (g * p * np.power(av, p - 1.0),), fwd)


def matmul(a, b):
    """Matrix product of 2-D tensors (1-D right operands are treated as columns)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {av.shape} x {bv.shape}")

    def vjp():
        if bv.ndim == 1:
            return lambda g: (np.outer(g, bv), av.T @ g)
        return lambda g: (g @ bv.T, av.T @ g)

    return record("matmul", (a, b), av @ bv, vjp, np.matmul)


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.values)
    return record("exp", (a,), y, lambda: lambda g: (g * y,), np.exp)


def log(a):
    a = as_tensor(a)
    av = a.values
    return record("log", (a,), np.log(av), lambda: lambda g: (g / av,), np.log)


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.values)
    return record("tanh", (a,), y, lambda: lambda g: (g * (1.0 - y * y),), np.tanh)


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid(np.atleast_1d(a.values)).reshape(a.shape)

    def fwd(x):
        return _sigmoid(np.atleast_1d(x)).reshape(x.shape)

    return record("sigmoid", (a,), y, lambda: lambda g: (g * y * (1.0 - y),), fwd)


def log_sigmoid(a):
    """log(sigmoid(x)) without overflow for large |x|."""
    a = as_tensor(a)
    av = a.values

    def fwd(x):
        return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    s = _sigmoid(np.atleast_1d(-av)).reshape(av.shape)
    return record("log_sigmoid", (a,), fwd(av), lambda: lambda g: (g * s,), fwd)


def relu(a):
    a = as_tensor(a)
    av = a.values

    def fwd(x):
        return np.maximum(x, 0.0)

    return record("relu", (a,), fwd(av), lambda: lambda g: (g * (av > 0),), fwd)


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    av = a.values
    slope = float(slope)

    def fwd(x):
        return np.where(x >= 0, x, slope * x)

    return record("leaky_relu", (a,), fwd(av),
                  lambda: lambda g: (np.where(av >= 0, g, slope * g),), fwd)


def elu(a, alpha=1.0):
    a = as_tensor(a)
    av = a.values

    def fwd(x):
        return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))

    y = fwd(av)
    return record("elu", (a,), y, lambda: lambda g: (np.where(av > 0, g, g * (y + alpha)),), fwd)


def clip(a, lo, hi):
    a = as_tensor(a)
    av = a.values

    def fwd(x):
        return np.clip(x, lo, hi)

    inside = (av >= lo) & (av <= hi)
    return record("clip", (a,), fwd(av), lambda: lambda g: (g * inside,), fwd)


def _softmax(x, axis):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.values.ndim == 0 or a.values.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    y = _softmax(a.values, axis)

    def fwd(x):
        return _softmax(x, axis)

    def vjp():
        return lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return record("softmax", (a,), y, vjp, fwd)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def fwd(x):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def vjp():
        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return back

    return record("sum", (a,), fwd(a.values), vjp, fwd)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def fwd(x):
        return np.reshape(x, shape)

    return record("reshape", (a,), fwd(a.values), lambda: lambda g: (g.reshape(old),), fwd)


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)

    def fwd(x):
        return np.transpose(x, axes)

    return record("transpose", (a,), fwd(a.values), lambda: lambda g: (np.transpose(g, inv),), fwd)


def getitem(a, index):
    a = as_tensor(a)
    shape = a.shape

    def fwd(x):
        return x[index]

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def vjp():
        def back(g):
            out = np.zeros(shape)
            if basic:
                # views never alias twice, so plain assignment suffices
                out[index] = g
            else:
                np.add.at(out, index, g)
            return (out,)
        return back

    return record("getitem", (a,), fwd(a.values), vjp, fwd)


def gather_rows(a, index):
    """Rows ``a[index]``; the backward pass scatter-adds through the kernel."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n, rest = a.shape[0], a.shape[1:]

    def fwd(x):
        return x[index]

    def vjp():
        def back(g):
            flat = g.reshape(len(index), -1)
            return (kernels.scatter_add_rows(flat, index, n).reshape((n,) + rest),)
        return back

    return record("gather_rows", (a,), fwd(a.values), vjp, fwd)


def scatter_add_rows(a, index, n_out):
    """Sum rows of ``a`` into ``n_out`` output rows selected by ``index``."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    rest = a.shape[1:]

    def fwd(x):
        flat = x.reshape(x.shape[0], -1)
        return kernels.scatter_add_rows(flat, index, n_out).reshape((n_out,) + rest)

    return record("scatter_add_rows", (a,), fwd(a.values), lambda: lambda g: (g[index],), fwd)


def segment_softmax(scores, indptr):
    """Softmax of each column inside contiguous row segments given by ``indptr``."""
    scores = as_tensor(scores)
    indptr = np.asarray(indptr, dtype=np.int64)
    if scores.ndim != 2:
        raise ShapeError("segment_softmax expects a 2-D score matrix")
    seg = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))

    def fwd(x):
        return kernels.segment_softmax(x, indptr)

    y = fwd(scores.values)

    def vjp():
        def back(g):
            dot = kernels.segment_sum(g * y, indptr)
            return (y * (g - dot[seg]),)
        return back

    return record("segment_softmax", (scores,), y, vjp, fwd)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def fwd(*xs):
        return np.concatenate(xs, axis=axis)

    def vjp():
        return lambda g: tuple(np.split(g, splits, axis=axis))

    return record("concat", ts, fwd(*[t.values for t in ts]), vjp, fwd)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]

    def fwd(*xs):
        return np.stack(xs, axis=axis)

    def vjp():
        return lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return record("stack", ts, fwd(*[t.values for t in ts]), vjp, fwd)


def where(mask, a, b):
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)

    def fwd(x, y):
        return np.where(mask, x, y)

    def vjp():
        return lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                          _unbroadcast(np.where(mask, 0.0, g), b.shape))

    return record("where", (a, b), fwd(a.values, b.values), vjp, fwd)


def square(a):
    return mul(a, a)


def dot_rows(a, b):
    """Row-wise inner products of two equally shaped matrices."""
    return sum(mul(a, b), axis=-1)
