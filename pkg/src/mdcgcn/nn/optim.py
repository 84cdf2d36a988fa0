import numpy as np

from ..errors import ConfigError, ShapeError


class AdamState:
    """Moment accumulators and hyperparameters for :func:`adam_step`."""

    def __init__(self, shapes, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = [np.zeros(s, dtype=dtype) for s in shapes]
        self.v = [np.zeros(s, dtype=dtype) for s in shapes]


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on the ``params`` arrays."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params, grads and optimizer state disagree in length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    """Adam over a list of parameter tensors."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        dtype = self.params[0].dtype if self.params else np.float64
        self.state = AdamState([p.shape for p in self.params], lr, beta1, beta2, eps, dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
