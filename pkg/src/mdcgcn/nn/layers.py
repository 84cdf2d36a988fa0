"""Parameterized layers: graph convolution and dense linear."""

import numpy as np

from . import functional as F
from .tensor import Tensor


def glorot_uniform(rng, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class GCNLayer:
    """Graph convolution with weight ``(in, out)`` and bias ``(out,)``.

    ``residual=True`` adds the layer input to its output and requires
    ``in_dim == out_dim``.
    """

    def __init__(self, in_dim, out_dim, rng, activation="relu", residual=False, bias=True, dtype=np.float64, name="gcn"):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.activation = activation
        self.residual = residual
        self.weight = Tensor(glorot_uniform(rng, in_dim, out_dim, dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True, name=f"{name}.bias") if bias else None
        self.name = name

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def __call__(self, x, op):
        fn = F.gcn_residual_forward if self.residual else F.gcn_forward
        return fn(x, op, self.weight, self.bias, self.activation)

    def __repr__(self):
        return f"GCNLayer(in={self.in_dim}, out={self.out_dim}, activation={self.activation})"


class Linear:
    def __init__(self, in_dim, out_dim, rng, dtype=np.float64, name="linear"):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.weight = Tensor(glorot_uniform(rng, in_dim, out_dim, dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True, name=f"{name}.bias")
        self.name = name

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return F.linear_forward(x, self.weight, self.bias)

    def __repr__(self):
        return f"Linear(in={self.in_dim}, out={self.out_dim})"
