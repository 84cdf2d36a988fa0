import numpy as np
import pytest

from mdcgcn import shapes

ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")


def central_difference(f, x, idx, h=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``x[idx]``, restoring ``x`` afterwards."""
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_indices(shape, count, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def directed_edges_unique(mesh):
    f = mesh.faces
    half = np.stack([f, np.roll(f, -1, axis=1)], axis=2).reshape(-1, 2)
    return len({tuple(h) for h in half}) == len(half)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tet():
    return shapes.tetrahedron()


@pytest.fixture
def cube():
    return shapes.cube()


def gradient_errors(loss_fn, params, rng, per_param=10, h=1e-5):
    """Relative errors between tape gradients and central differences.

    ``loss_fn`` must rebuild the forward pass on every call and return a
    ``(1, 1)`` tensor. Returns one error per sampled coordinate.
    """
    from mdcgcn.nn import backward, no_grad

    for p in params:
        p.grad = None
    backward(loss_fn())
    errors = []

    def value():
        with no_grad():
            return float(loss_fn().data.reshape(-1)[0])

    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        for idx in sample_indices(p.shape, per_param, rng):
            numeric = central_difference(value, p.data, idx, h)
            errors.append(relative_error(analytic[idx], numeric))
    return errors
