"""Differentiable operations on :class:`Tensor`.

Every op returns a new tensor and, when recording, a closure that maps the
output gradient to one gradient per input.
"""

import numpy as np

from .. import kernels
from ..errors import ConfigError, LabelError, ShapeError
from .tensor import Tensor, make_result


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    """Elementwise sum; ``b`` may be a row vector broadcast over rows."""
    a, b = _t(a), _t(b)
    if a.shape != b.shape and not (b.ndim == 1 and a.ndim == 2 and b.shape[0] == a.shape[1]):
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")

    def backward(g):
        gb = g if b.shape == g.shape else g.sum(axis=0)
        return g, gb

    return make_result(a.data + b.data, (a, b), backward)


def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward)


def spmm(op, x):
    """Sparse aggregation ``op @ x`` with a constant (non-learned) operator."""
    x = _t(x)
    out = op.matmul(x.data)
    cache = {}

    def backward(g):
        if "t" not in cache:
            cache["t"] = op.transpose()
        return (cache["t"].matmul(g),)

    return make_result(out, (x,), backward)


def relu(x):
    x = _t(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,), backward)


def tanh(x):
    x = _t(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return make_result(y, (x,), backward)


ACTIVATIONS = {"relu": relu, "tanh": tanh}


def activation(name):
    if name is None or name == "none":
        return None
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


def concat(tensors):
    """Concatenate along columns."""
    tensors = [_t(t) for t in tensors]
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"cannot concatenate tensors with row counts {sorted(rows)}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, s:e] for s, e in zip(bounds[:-1], bounds[1:]))

    return make_result(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), backward)


def total(x):
    """Sum of all entries, as a ``(1, 1)`` tensor."""
    x = _t(x)

    def backward(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return make_result(np.array([[x.data.sum()]], dtype=x.dtype), (x,), backward)


def dropout(x, p, training, rng):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = _t(x)
    if not training or p == 0.0:
        return x
    scale = 1.0 / (1.0 - p)
    mask = (rng.random(x.shape) >= p).astype(x.dtype) * scale

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward)


def mean_nodes(x, offsets):
    """Per-graph mean over node rows ``offsets[g]:offsets[g + 1]``."""
    x = _t(x)
    offsets = np.asarray(offsets, dtype=np.int64)
    if x.shape[0] != offsets[-1]:
        raise ShapeError(f"features have {x.shape[0]} rows but the batch has {offsets[-1]} nodes")
    counts = np.diff(offsets)
    if np.any(counts <= 0):
        raise ShapeError(f"graph {int(np.argmax(counts <= 0))} has no nodes")
    inv = (1.0 / counts).astype(x.dtype)[:, None]
    out = kernels.segment_sum(x.data, offsets) * inv

    def backward(g):
        return (np.repeat(g * inv, counts, axis=0),)

    return make_result(out, (x,), backward)


def log_softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean over rows of ``-x[class] + log(sum_j exp(x[j]))``, max-shifted."""
    logits = _t(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise LabelError(f"label {bad} outside [0, {c})")
    logp = log_softmax_rows(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return (grad * (g.reshape(-1)[0] / n),)

    return make_result(np.array([[loss]], dtype=logits.dtype), (logits,), backward)


def gcn_forward(x, op, weight, bias, act="relu"):
    """``act(op @ x @ W + b)``; the cheaper multiplication order is chosen by width."""
    x = _t(x)
    if op.n != x.shape[0]:
        raise ShapeError(f"operator has {op.n} nodes but features have {x.shape[0]} rows")
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(f"layer expects input width {weight.shape[0]}, got {x.shape[1]}")
    if weight.shape[1] < weight.shape[0]:
        h = spmm(op, matmul(x, weight))
    else:
        h = matmul(spmm(op, x), weight)
    if bias is not None:
        h = add(h, bias)
    fn = activation(act) if isinstance(act, (str, type(None))) else act
    return fn(h) if fn is not None else h


def gcn_residual_forward(x, op, weight, bias, act="relu"):
    """GCN layer output plus its input; needs equal input and output widths."""
    x = _t(x)
    if weight.shape[0] != weight.shape[1]:
        raise ShapeError(f"residual GCN needs in == out, got {weight.shape[0]} -> {weight.shape[1]}")
    return add(gcn_forward(x, op, weight, bias, act), x)


def linear_forward(x, weight, bias):
    x = _t(x)
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(f"linear layer expects input width {weight.shape[0]}, got {x.shape[1]}")
    h = matmul(x, weight)
    return add(h, bias) if bias is not None else h
