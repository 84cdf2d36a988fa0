from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (
    add,
    concat,
    cross_entropy,
    dropout,
    gcn_forward,
    gcn_residual_forward,
    linear_forward,
    matmul,
    mean_nodes,
    relu,
    spmm,
    tanh,
    total,
)
from .layers import GCNLayer, Linear, glorot_uniform
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward, grad_enabled, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "GCNLayer",
    "Linear",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "concat",
    "cross_entropy",
    "dropout",
    "gcn_forward",
    "gcn_residual_forward",
    "glorot_uniform",
    "grad_enabled",
    "linear_forward",
    "load_checkpoint",
    "matmul",
    "mean_nodes",
    "no_grad",
    "relu",
    "save_checkpoint",
    "spmm",
    "tanh",
    "total",
]
