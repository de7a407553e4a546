"""Dense float64 tensors and the reverse-mode computation tape."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape():
    tapes = _stack()
    return tapes[-1] if tapes else None


class Tensor:
    """A dense array of 64-bit reals that can take part in differentiation.

    ``grad`` is ``None`` until a backward pass reaches the tensor.
    """

    __array_priority__ = 100
    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)

    def item(self):
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float(self.values)

    def numpy(self):
        return self.values

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.values.shape[0]

    # arithmetic sugar; definitions live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __pow__(self, p):
        from . import ops

        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    """One recorded primitive: output = forward(*input values)."""

    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable
    forward: Callable


class Tape:
    """Records primitive operations executed inside a ``with`` block.

    Nodes are appended in execution order, so inputs always precede the
    nodes that consume them.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, node):
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor, seed=None):
        if seed is None:
            if loss.size != 1:
                raise ShapeError("backward needs a scalar loss or an explicit seed gradient")
            seed = np.ones_like(loss.values)
        grads = {id(loss): np.asarray(seed, dtype=np.float64)}
        touched = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            node.output.grad = g
            in_grads = node.vjp(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                touched[id(t)] = t
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
        # whatever is left in ``grads`` belongs to leaves
        for key, t in touched.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g
        produced = {id(n.output) for n in self.nodes}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t.grad is None and id(t) not in produced:
                    t.grad = np.zeros_like(t.values)
        return loss

    def replay(self):
        """Recompute every node from current leaf values.

        Returns the largest absolute deviation from the recorded outputs.
        """
        cache = {}

        def value(t):
            if id(t) in cache:
                return cache[id(t)]
            return t.values

        worst = 0.0
        for node in self.nodes:
            out = node.forward(*[value(t) for t in node.inputs])
            cache[id(node.output)] = out
            diff = np.max(np.abs(out - node.output.values)) if out.size else 0.0
            worst = max(worst, float(diff))
        return worst

    def replay_exact(self):
        return self.replay() == 0.0


def record(op: str, inputs: Sequence[Tensor], out_value, vjp_factory, forward):
    """Wrap ``out_value`` and register it on the active tape if needed."""
    out = Tensor(out_value)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(Node(op, tuple(inputs), out, vjp_factory(), forward))
    return out


class no_tape:
    """Suspend recording, e.g. for inference or finite differences."""

    def __enter__(self):
        self._saved = list(_stack())
        _stack().clear()
        return self

    def __exit__(self, *exc):
        _stack().extend(self._saved)
        return False
