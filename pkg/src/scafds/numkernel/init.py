import numpy as np

from .tensor import Tensor


def glorot(rng, fan_in, fan_out, shape=None, name=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def zeros(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def normal(rng, shape, scale, name=None):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, name=name)
