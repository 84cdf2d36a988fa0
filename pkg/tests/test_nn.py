import mpmath
import numpy as np
import pytest

from mdcgcn.errors import ConfigError, LabelError, ShapeError, TapeError
from mdcgcn.graph import FaceGraph, batch_graphs, normalized_operator
from mdcgcn.nn import (
    Adam,
    AdamState,
    Tensor,
    adam_step,
    add,
    backward,
    concat,
    cross_entropy,
    dropout,
    gcn_forward,
    gcn_residual_forward,
    linear_forward,
    load_checkpoint,
    matmul,
    mean_nodes,
    no_grad,
    relu,
    save_checkpoint,
    spmm,
    tanh,
    total,
)
from mdcgcn.shapes import icosphere
from mdcgcn.graph import mesh_to_graph
from mdcgcn.mesh import build_edge_table

from conftest import gradient_errors

EMPTY = np.zeros((0, 2), dtype=np.int64)


def _param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _op():
    m = icosphere(1)
    return normalized_operator(mesh_to_graph(m, build_edge_table(m)))


def _project(t, r):
    """Scalar test loss: a fixed random projection of ``t``."""
    return total(matmul(t, Tensor(r)))


# forward examples


def test_gcn_isolated_relu():
    op = normalized_operator(FaceGraph(1, EMPTY))
    out = gcn_forward(np.array([[1.0, -2.0]]), op, Tensor(np.eye(2)), Tensor(np.zeros(2)), "relu")
    assert out.data.tolist() == [[1.0, 0.0]]


def test_gcn_pair_no_activation():
    op = normalized_operator(FaceGraph(2, np.array([[0, 1]])))
    out = gcn_forward(np.array([[2.0, 0.0], [0.0, 2.0]]), op, Tensor(np.eye(2)), Tensor(np.zeros(2)), None)
    assert out.data.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_gcn_k4_constant_rows(rng, tet):
    op = normalized_operator(mesh_to_graph(tet, build_edge_table(tet)))
    x = np.tile(rng.normal(size=5), (4, 1))
    for w in (rng.normal(size=(5, 3)), rng.normal(size=(5, 9))):
        out = gcn_forward(x, op, Tensor(w), Tensor(rng.normal(size=w.shape[1])), "relu").data
        assert np.all(out == out[0])


def test_gcn_shape_errors(rng):
    op = normalized_operator(FaceGraph(2, np.array([[0, 1]])))
    with pytest.raises(ShapeError):
        gcn_forward(np.zeros((3, 2)), op, Tensor(np.eye(2)), None)
    with pytest.raises(ShapeError):
        gcn_forward(np.zeros((2, 3)), op, Tensor(np.eye(2)), None)


def test_residual_examples(rng):
    op = _op()
    x = rng.normal(size=(op.n, 4))
    zero = gcn_residual_forward(x, op, Tensor(np.zeros((4, 4))), Tensor(np.zeros(4)), None)
    np.testing.assert_array_equal(zero.data, x)
    iso = normalized_operator(FaceGraph(1, EMPTY))
    out = gcn_residual_forward(np.ones((1, 2)), iso, Tensor(np.eye(2)), Tensor(np.zeros(2)), None)
    assert out.data.tolist() == [[2.0, 2.0]]
    with pytest.raises(ShapeError):
        gcn_residual_forward(x, op, Tensor(np.zeros((4, 3))), None)


def test_residual_is_gcn_plus_input(rng):
    op = _op()
    x = rng.normal(size=(op.n, 6))
    w, b = Tensor(rng.normal(size=(6, 6))), Tensor(rng.normal(size=6))
    res = gcn_residual_forward(x, op, w, b, "relu").data
    plain = gcn_forward(x, op, w, b, "relu").data
    # the residual is formed as plain + x, so that sum is bitwise reproducible
    assert np.array_equal(res, plain + x)
    np.testing.assert_allclose(res - x, plain, rtol=0, atol=1e-14)


def test_linear_examples():
    out = linear_forward(np.array([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor(np.array([3.0, 3.0])))
    assert out.data.tolist() == [[4.0, 5.0]]
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(linear_forward(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, x)
    with pytest.raises(ShapeError):
        linear_forward(x, Tensor(np.eye(3)), None)


def test_linear_weight_gradient_is_column_broadcast(rng):
    t = rng.normal(size=(1, 4))
    w = _param(rng, 4, 3)
    b = _param(rng, 3)
    backward(total(linear_forward(t, w, b)))
    np.testing.assert_array_equal(w.grad, np.repeat(t.T, 3, axis=1))
    errs = gradient_errors(lambda: total(linear_forward(t, w, b)), [w], rng, per_param=12)
    assert max(errs) < 1e-4


# dropout / readout


def test_dropout_identity_cases(rng):
    x = Tensor(rng.normal(size=(5, 5)))
    assert dropout(x, 0.0, True, rng) is x
    assert dropout(x, 0.7, False, rng) is x
    for p in (-0.1, 1.0):
        with pytest.raises(ConfigError):
            dropout(x, p, True, rng)


def test_dropout_statistics(rng):
    out = dropout(Tensor(np.ones((1000, 1000))), 0.3, True, rng).data
    assert abs(out.mean() - 1.0) < 0.01
    assert abs((out == 0).mean() - 0.3) < 0.005
    np.testing.assert_allclose(out[out != 0], 1 / 0.7)


def test_mean_nodes_examples():
    assert mean_nodes(np.array([[1.0, 3.0], [3.0, 5.0]]), [0, 2]).data.tolist() == [[2.0, 4.0]]
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert mean_nodes(x, [0, 1, 2]).data.tolist() == x.tolist()
    r = np.array([0.1, -7.3, 2.5])
    np.testing.assert_allclose(mean_nodes(np.tile(r, (500, 1)), [0, 500]).data[0], r, rtol=1e-14)
    with pytest.raises(ShapeError):
        mean_nodes(x, [0, 0, 2])
    with pytest.raises(ShapeError):
        mean_nodes(x, [0, 3])


def test_mean_nodes_permutation_invariant(rng):
    x = rng.normal(size=(12, 3))
    offsets = np.array([0, 5, 12])
    perm = np.concatenate([rng.permutation(5), 5 + rng.permutation(7)])
    a = mean_nodes(x, offsets).data
    b = mean_nodes(x[perm], offsets).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
    # reorder whole graphs together with the range table
    swapped = np.concatenate([x[5:], x[:5]])
    np.testing.assert_array_equal(mean_nodes(swapped, [0, 7, 12]).data, a[::-1])


# loss


def test_cross_entropy_examples():
    assert cross_entropy(np.zeros((1, 2)), [0]).data[0, 0] == pytest.approx(np.log(2), abs=1e-15)
    big = cross_entropy(np.array([[1000.0, 0.0]]), [0]).data[0, 0]
    assert np.isfinite(big) and 0 <= big < 1e-12
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((1, 2)), [2])
    with pytest.raises(LabelError):
        cross_entropy(np.zeros((1, 2)), [-1])


def test_cross_entropy_high_precision_oracle(rng):
    logits = rng.normal(scale=3.0, size=(8, 5))
    labels = rng.integers(0, 5, size=8)
    mpmath.mp.prec = 128
    rows = []
    for x, c in zip(logits, labels):
        lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in x))
        rows.append(-mpmath.mpf(float(x[c])) + lse)
    expected = float(mpmath.fsum(rows) / len(rows))
    assert abs(cross_entropy(logits, labels).data[0, 0] - expected) < 1e-10


def test_cross_entropy_shift_invariant_and_nonnegative(rng):
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    base = cross_entropy(logits, labels).data[0, 0]
    shifted = cross_entropy(logits + rng.normal(size=(6, 1)) * 50, labels).data[0, 0]
    assert base >= 0
    assert abs(base - shifted) < 1e-12


# gradient checks


def test_gradients_elementary_ops(rng):
    a, b = _param(rng, 4, 3), _param(rng, 4, 3)
    row = _param(rng, 3)
    m = _param(rng, 3, 5)
    r3, r5 = rng.normal(size=(3, 1)), rng.normal(size=(5, 1))
    cases = [
        (lambda: _project(add(a, b), r3), [a, b]),
        (lambda: _project(add(a, row), r3), [a, row]),
        (lambda: _project(matmul(a, m), r5), [a, m]),
        (lambda: _project(tanh(a), r3), [a]),
        (lambda: _project(relu(a), r3), [a]),
        (lambda: total(concat([a, b, a])), [a, b]),
    ]
    errs = []
    for fn, params in cases:
        errs += gradient_errors(fn, params, rng, per_param=6)
    assert max(errs) < 1e-4


def test_gradients_graph_ops(rng):
    op = _op()
    n = op.n
    x = _param(rng, n, 4)
    w_up, w_down, w_sq = _param(rng, 4, 7), _param(rng, 4, 2), _param(rng, 4, 4)
    b7, b2, b4 = _param(rng, 7), _param(rng, 2), _param(rng, 4)
    offsets = np.array([0, 30, n])
    rng_r2, rng_r4, rng_r7 = (rng.normal(size=(k, 1)) for k in (2, 4, 7))
    labels = rng.integers(0, 7, size=n)
    cases = [
        (lambda: _project(spmm(op, x), rng_r4), [x]),
        (lambda: _project(gcn_forward(x, op, w_up, b7, "relu"), rng_r7), [x, w_up, b7]),
        (lambda: _project(gcn_forward(x, op, w_down, b2, "tanh"), rng_r2), [x, w_down, b2]),
        (lambda: _project(gcn_residual_forward(x, op, w_sq, b4, "relu"), rng_r4), [x, w_sq, b4]),
        (lambda: _project(mean_nodes(x, offsets), rng_r4), [x]),
        (lambda: cross_entropy(gcn_forward(x, op, w_up, b7, None), labels), [x, w_up, b7]),
    ]
    errs = []
    for fn, params in cases:
        errs += gradient_errors(fn, params, rng, per_param=6)
    assert max(errs) < 1e-4


def test_gradient_dropout_with_fixed_mask(rng):
    x = _param(rng, 6, 5)
    r = rng.normal(size=(5, 1))

    def loss():
        return _project(dropout(x, 0.3, True, np.random.default_rng(3)), r)

    assert max(gradient_errors(loss, [x], rng, per_param=15)) < 1e-4


def test_gradient_sum_of_product_exact(rng):
    x = rng.normal(size=(1, 3))
    w = _param(rng, 3, 2)
    backward(total(matmul(Tensor(x), w)))
    np.testing.assert_array_equal(w.grad, np.repeat(x.T, 2, axis=1))


# tape


def test_backward_twice_raises(rng):
    w = _param(rng, 2, 2)
    loss = total(matmul(Tensor(np.ones((1, 2))), w))
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_no_grad_records_nothing(rng):
    w = _param(rng, 2, 2)
    with no_grad():
        loss = total(matmul(Tensor(np.ones((1, 2))), w))
    assert not loss.requires_grad and loss.parents == ()
    with pytest.raises(TapeError):
        backward(loss)
    assert w.grad is None


def test_shared_subexpression_gradients_accumulate(rng):
    w = _param(rng, 3, 3)
    h = matmul(Tensor(np.eye(3)), w)
    backward(total(add(h, h)))
    np.testing.assert_array_equal(w.grad, np.full((3, 3), 2.0))


def test_deep_chain_no_recursion_limit(rng):
    x = _param(rng, 1, 1)
    h = x
    for _ in range(5000):
        h = add(h, Tensor(np.zeros((1, 1))))
    backward(total(h))
    assert x.grad[0, 0] == 1.0


# optimizer


def test_adam_first_step_is_sign(rng):
    p = rng.normal(size=(4, 4))
    g = rng.normal(size=(4, 4))
    start = p.copy()
    state = AdamState([p.shape])
    adam_step([p], [g], state)
    # with bias correction, m_hat = g and v_hat = g^2 after one step
    np.testing.assert_allclose(p - start, -3e-4 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(p - start, -3e-4 * np.sign(g), rtol=1e-6)


def test_adam_second_step_hand_computed():
    p = np.array([1.0])
    state = AdamState([p.shape], lr=0.1)
    adam_step([p], [np.array([2.0])], state)
    adam_step([p], [np.array([-1.0])], state)
    m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0
    v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0
    step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert p[0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8) - step2, abs=1e-15)
    assert state.step == 2


def test_adam_zero_grad_and_zero_lr(rng):
    p = rng.normal(size=3)
    start = p.copy()
    state = AdamState([p.shape])
    adam_step([p], [rng.normal(size=3)], state)
    m_before = state.m[0].copy()
    moved = p.copy()
    adam_step([p], [np.zeros(3)], state)
    np.testing.assert_array_equal(state.m[0], 0.9 * m_before)
    assert not np.array_equal(p, moved)  # momentum keeps it moving
    q = start.copy()
    zero_lr = AdamState([q.shape], lr=0.0)
    for _ in range(3):
        adam_step([q], [rng.normal(size=3)], zero_lr)
    np.testing.assert_array_equal(q, start)


def test_adam_fresh_zero_grad_leaves_params(rng):
    p = rng.normal(size=3)
    start = p.copy()
    state = AdamState([p.shape])
    adam_step([p], [np.zeros(3)], state)
    np.testing.assert_array_equal(p, start)
    assert state.step == 1


def test_adam_wrapper_matches_functional(rng):
    w = _param(rng, 2, 3)
    raw = w.data.copy()
    x, r = rng.normal(size=(4, 2)), rng.normal(size=(3, 1))
    opt = Adam([w], lr=0.01)
    state = AdamState([raw.shape], lr=0.01)
    for _ in range(5):
        opt.zero_grad()
        backward(_project(tanh(matmul(Tensor(x), w)), r))
        grad = x.T @ ((1 - np.tanh(x @ raw) ** 2) * r.T)
        opt.step()
        adam_step([raw], [grad], state)
    np.testing.assert_allclose(w.data, raw, rtol=0, atol=1e-14)


def test_adam_rejects_bad_config():
    with pytest.raises(ConfigError):
        AdamState([(1,)], lr=-1)
    with pytest.raises(ConfigError):
        AdamState([(1,)], beta1=1.0)


# checkpoint


def test_checkpoint_roundtrip_and_byte_stable(tmp_path, rng):
    arrays = {"a.weight": rng.normal(size=(3, 4)), "a.bias": np.zeros(4), "f32": rng.normal(size=5).astype(np.float32)}
    meta = {"config": {"tau": 8}, "step": 3}
    save_checkpoint(tmp_path / "one.ckpt", arrays, meta)
    save_checkpoint(tmp_path / "two.ckpt", dict(arrays), dict(meta))
    assert (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()
    back, meta_back = load_checkpoint(tmp_path / "one.ckpt")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(back[k], arrays[k])
    assert meta_back == meta


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"not a checkpoint")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "x")
