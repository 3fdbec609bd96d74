import numpy as np
import pytest

from graphmaker import numerics as nm
from graphmaker.numerics import GradTape, Tensor


def test_matmul_examples():
    b = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(nm.matmul(np.eye(3), b).data, b)
    out = nm.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])
    assert np.array_equal(nm.matmul(np.zeros((2, 3)), np.ones((3, 4))).data, np.zeros((2, 4)))


def test_matmul_shape_error():
    with pytest.raises(ValueError):
        nm.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_associative():
    rng = np.random.default_rng(0)
    a, b, c = (rng.normal(size=(10, 10)) + 3 * np.eye(10) for _ in range(3))
    left = nm.matmul(nm.matmul(a, b), c).data
    right = nm.matmul(a, nm.matmul(b, c)).data
    assert np.max(np.abs(left - right) / np.maximum(np.abs(left), 1e-12)) < 1e-9


def test_relu_layernorm_dropout():
    assert np.array_equal(nm.relu(np.array([[-1.0, 2, 0]])).data, [[0, 2, 0]])
    ln = nm.LayerNorm(4)
    assert np.allclose(ln(np.full((1, 4), 3.0)).data, 0.0)
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert nm.dropout(x, 0.0, None, True).data is not None
    assert np.array_equal(nm.dropout(x, 0.0, None, True).data, x)
    assert np.array_equal(nm.dropout(x, 0.5, None, False).data, x)


def test_layer_forward_composition():
    rng = np.random.default_rng(2)
    lin = nm.Linear(3, 5, rng)
    ln = nm.LayerNorm(5)
    x = rng.normal(size=(4, 3))
    y = nm.layer_forward(x, lin, "relu", ln, 0.3, training=False)
    z = np.maximum(x @ lin.weight.data + lin.bias.data, 0)
    mu = z.mean(1, keepdims=True)
    var = z.var(1, keepdims=True)
    assert np.allclose(y.data, (z - mu) / np.sqrt(var + 1e-5))


def test_softmax_cross_entropy_values():
    assert abs(float(nm.softmax_cross_entropy(np.array([[0.0, 0.0]]), [0]).data) - np.log(2)) < 1e-12
    big = float(nm.softmax_cross_entropy(np.array([[1000.0, -1000.0]]), [0]).data)
    assert np.isfinite(big) and big < 1e-12
    direct = -np.log(np.exp(3) / (np.exp(1) + np.exp(2) + np.exp(3)))
    assert abs(float(nm.softmax_cross_entropy(np.array([[1.0, 2, 3]]), [2]).data) - direct) < 1e-12
    assert abs(direct - 0.4076) < 1e-4
    with pytest.raises(IndexError):
        nm.softmax_cross_entropy(np.array([[1.0, 2]]), [2])


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(3).normal(scale=30, size=(50, 7))
    assert np.max(np.abs(nm.softmax_np(x).sum(1) - 1)) < 1e-12


def test_grad_check_scalar_cases():
    th = Tensor(np.array([[3.0]]), requires_grad=True)
    err = nm.grad_check(lambda: nm.sum_all(nm.mul(th, th)), [th])
    assert err < 1e-9
    with GradTape() as tape:
        loss = nm.sum_all(nm.mul(th, th))
    assert tape.gradient(loss, [th])[0][0, 0] == pytest.approx(6.0)
    c = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    const = lambda: nm.sum_all(Tensor(np.array([[5.0]])))
    with GradTape() as tape:
        loss = const()
    assert np.array_equal(tape.gradient(loss, [c])[0], np.zeros((1, 2)))
    assert nm.grad_check(const, [c]) == 0.0


def test_grad_check_two_layer_mlp():
    rng = np.random.default_rng(4)
    l1, l2 = nm.Linear(5, 7, rng), nm.Linear(7, 3, rng)
    ln = nm.LayerNorm(7)
    x = rng.normal(size=(6, 5))
    y = rng.integers(0, 3, size=6)

    def f():
        return nm.softmax_cross_entropy(l2(nm.layer_forward(x, l1, "relu", ln)), y)

    params = [p for m in (l1, ln, l2) for p in m.parameters()]
    assert nm.grad_check(f, params) < 1e-4


def test_grad_ops_misc():
    rng = np.random.default_rng(5)
    h = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    u = np.array([0, 1, 2, 3, 0])
    v = np.array([4, 4, 1, 2, 3])
    import scipy.sparse as sp
    adj = sp.random(5, 5, density=0.5, random_state=1, format="csr")
    t = Tensor(rng.normal(size=(1, 3)), requires_grad=True)

    def f():
        z = nm.spmm(adj, h)
        p = nm.pair_product(z, u, v)
        s = nm.sum_rows(p)
        cat = nm.concat([nm.matmul(nm.take_rows(z, u), w), nm.repeat_rows(t, 5), s], axis=1)
        return nm.add(nm.bce_with_logits(nm.sum_rows(cat), np.array([1, 0, 1, 1, 0])),
                      nm.scale(nm.sum_all(nm.mul(t, t)), 0.1))

    assert nm.grad_check(f, [h, w, t]) < 1e-4


def test_grouped_cross_entropy_matches_per_attribute():
    rng = np.random.default_rng(6)
    card = [2, 3, 2, 4]
    logits = Tensor(rng.normal(size=(5, sum(card))), requires_grad=True)
    targets = np.stack([rng.integers(0, c, size=5) for c in card], 1)
    got = float(nm.grouped_cross_entropy(logits, targets, card).data)
    off = np.cumsum([0] + card)
    ref = np.mean([float(nm.softmax_cross_entropy(logits.data[:, off[f]:off[f + 1]], targets[:, f]).data)
                   for f in range(len(card))])
    assert abs(got - ref) < 1e-12
    assert nm.grad_check(lambda: nm.grouped_cross_entropy(logits, targets, card), [logits]) < 1e-4


def test_amsgrad_and_clipping():
    p = Tensor(np.array([[1.0, -2.0]]), requires_grad=True)
    opt = nm.AMSGrad([p], lr=0.1)
    for _ in range(200):
        with GradTape() as tape:
            loss = nm.sum_all(nm.mul(p, p))
        opt.step(tape.gradient(loss, [p]))
    assert np.all(np.abs(p.data) < 0.1)
    grads = [np.full((3,), 10.0), np.full((2,), -7.0)]
    before = nm.clip_grad_norm(grads, 1.0)
    assert before > 1.0
    assert np.sqrt(sum((g ** 2).sum() for g in grads)) <= 1.0 + 1e-9
