import math

import numpy as np
import pytest

from s2a import tensor as T
from s2a.tensor import Tensor


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x.data)
    it = np.nditer(x.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x.data[idx]
        x.data[idx] = old + h
        up = f().item()
        x.data[idx] = old - h
        down = f().item()
        x.data[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def check_grads(f, inputs, tol=1e-6):
    for x in inputs:
        x.zero_grad()
    T.backward(f())
    for x in inputs:
        num = numeric_grad(f, x)
        err = np.abs(x.grad - num).max() / max(np.abs(num).max(), 1e-8)
        assert err < tol, err


def test_matmul_gradient():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 2, 3), leaf(rng, 3, 4)
    w = rng.normal(size=(2, 4))
    check_grads(lambda: T.tsum(T.mul(T.matmul(a, b), Tensor(w))), [a, b])


def test_batched_matmul_gradient():
    rng = np.random.default_rng(1)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5)
    c = leaf(rng, 4, 2)
    w = rng.normal(size=(2, 3, 5))
    check_grads(lambda: T.tsum(T.mul(T.matmul(a, b), Tensor(w))) + T.tsum(T.matmul(a, c)), [a, b, c])


@pytest.mark.parametrize(
    "op",
    [T.sigmoid, T.softmax, T.log_softmax, T.exp, lambda t: T.layer_norm(t), lambda t: T.scale(t, 2.5)],
)
def test_unary_gradients(op):
    rng = np.random.default_rng(2)
    a = leaf(rng, 3, 5)
    w = rng.normal(size=(3, 5))
    check_grads(lambda: T.tsum(T.mul(op(a), Tensor(w))), [a])


def test_log_relu_gradients_away_from_kinks():
    rng = np.random.default_rng(3)
    a = Tensor(rng.uniform(0.5, 2.0, size=(4,)), requires_grad=True)
    b = Tensor(rng.choice([-1.0, 1.0], size=(4,)) * rng.uniform(0.2, 1.0, size=(4,)), requires_grad=True)
    check_grads(lambda: T.tsum(T.log(a)) + T.tsum(T.mul(T.relu(b), b)), [a, b])


def test_layer_norm_affine_gradients():
    rng = np.random.default_rng(4)
    a, g, b = leaf(rng, 2, 3, 6), leaf(rng, 6), leaf(rng, 6)
    w = rng.normal(size=(2, 3, 6))
    check_grads(lambda: T.tsum(T.mul(T.layer_norm(a, g, b), Tensor(w))), [a, g, b])


def test_shape_op_gradients():
    rng = np.random.default_rng(5)
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 4)
    w = rng.normal(size=(4, 7))
    f = lambda: T.tsum(T.mul(T.transpose(T.reshape(T.concat([a, b], -1), (7, 2)), (1, 0)).reshape(2, 7), Tensor(w[:2])))
    check_grads(f, [a, b])
    check_grads(lambda: T.mean(T.tsum(T.mul(a, a), axis=1)), [a])


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(6)
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    check_grads(lambda: T.tsum(T.mul(T.add(a, b), T.add(a, b))), [a, b])


def test_embedding_and_gather_gradients():
    rng = np.random.default_rng(7)
    table = leaf(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 0, 1]])
    w = rng.normal(size=(2, 3, 3))
    check_grads(lambda: T.tsum(T.mul(T.embedding(table, ids), Tensor(w))), [table])
    a = leaf(rng, 2, 3, 6)
    check_grads(lambda: T.tsum(T.gather_last(T.log_softmax(a), ids)), [a])


def test_masked_fill_blocks_gradient():
    a = Tensor(np.arange(4.0), requires_grad=True)
    mask = np.array([True, False, True, False])
    T.backward(T.tsum(T.masked_fill(a, mask, -1e9) * 1.0 + 0.0 * a))
    np.testing.assert_array_equal(a.grad, [0, 1, 0, 1])


def test_dropout_is_identity_in_eval_and_rescales_in_training():
    a = Tensor(np.ones((200, 200)))
    assert T.dropout(a, 0.3, None, training=False) is a
    out = T.dropout(a, 0.3, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 1 / 0.7}
    assert abs(out.mean() - 1.0) < 0.02


def test_softmax_symmetric():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(8).normal(scale=30, size=(10, 7)))
    np.testing.assert_allclose(T.softmax(x).data.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(T.log_softmax(x).data).sum(-1), 1.0, atol=1e-12)


def test_layer_norm_of_constant_is_zero():
    np.testing.assert_allclose(T.layer_norm(Tensor(np.full((2, 5), 3.0))).data, 0.0, atol=1e-12)


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    T.backward(T.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_unused_leaf_keeps_zero_grad():
    x, unused = Tensor(2.0, requires_grad=True), Tensor(np.ones(3), requires_grad=True)
    T.backward(T.mul(x, x))
    np.testing.assert_array_equal(unused.grad, 0.0)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        T.backward(Tensor(np.ones(2), requires_grad=True) * 2.0)


def test_shape_mismatch_message_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
        T.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


def test_cross_entropy_trivial_cases():
    one_hot = np.log(np.array([[1.0, 1e-300, 1e-300], [1e-300, 1.0, 1e-300]]))
    assert T.cross_entropy_label_smoothing(Tensor(one_hot), [0, 1], epsilon=0.0).item() == pytest.approx(0.0)
    uniform = np.full((3, 5), -math.log(5))
    assert T.cross_entropy_label_smoothing(Tensor(uniform), [0, 3, 4], epsilon=0.0).item() == pytest.approx(math.log(5))


def test_cross_entropy_smoothed_matches_scalar_formula():
    p = [0.1, 0.6, 0.2, 0.1]
    eps, target = 0.1, 1
    expected = -((1 - eps) * math.log(p[target]) + sum(eps / 3 * math.log(q) for k, q in enumerate(p) if k != target))
    lp = Tensor(np.log([p]))
    assert T.cross_entropy_label_smoothing(lp, [target], epsilon=eps).item() == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_ignores_padding_and_rejects_bad_target():
    lp = Tensor(np.log(np.array([[0.5, 0.5], [0.9, 0.1]])))
    assert T.cross_entropy_label_smoothing(lp, [0, 1], 0.0, ignore_id=1).item() == pytest.approx(math.log(2))
    with pytest.raises(IndexError):
        T.cross_entropy_label_smoothing(lp, [0, 2], 0.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    params = {"a": Tensor(rng.normal(size=(2, 3))), "b.c": Tensor(rng.normal(size=(4,)))}
    T.save_parameters(tmp_path / "ck.bin", params)
    back = T.load_parameters(tmp_path / "ck.bin")
    assert list(back) == ["a", "b.c"]
    for k in params:
        np.testing.assert_array_equal(back[k], params[k].data)
    raw = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        T.load_parameters(tmp_path / "cut.bin")
