"""A small reverse-mode tape over dense 2-D numpy arrays."""

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import TapeError

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Array plus the information needed to backpropagate through it.

    Leaves created with ``requires_grad=True`` are parameters; their
    gradients accumulate into ``.grad``. Interior nodes keep their parents
    and a ``backward_fn`` mapping the output gradient to one gradient per
    parent (``None`` where a parent needs none).
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name", "_freed")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.name = name
        self._freed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self.backward_fn is None

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from .functional import add

        return add(self, other)

    def __matmul__(self, other):
        from .functional import matmul

        return matmul(self, other)

    def backward(self):
        backward(self)


def make_result(data, parents, backward_fn):
    """Wrap an op result, recording it on the tape when any parent needs a gradient."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _topological(root):
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Backpropagate from a scalar ``loss`` into every parameter's ``.grad``.

    The recorded graph is released afterwards; calling again on the same
    loss raises :class:`TapeError`.
    """
    if loss._freed:
        raise TapeError("backward() already ran on this graph; run the forward pass again")
    if not loss.requires_grad:
        raise TapeError("loss was not produced by tracked operations (no_grad or no parameters)")
    if loss.data.size != 1:
        raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    if any(node._freed for node in order):
        raise TapeError("graph reuses intermediates whose tape was already released by backward()")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if not node.is_leaf:
            node.parents = ()
            node.backward_fn = None
            node._freed = True
    loss._freed = True
