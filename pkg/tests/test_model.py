import math

import numpy as np
import pytest

from conftest import model_grad_errors, tiny_batch
from s2a import tensor as T
from s2a.model import ModelConfig, S2AModel, fuse, fused_log_probs

BLK = 2


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, lam=1.5)


def test_config_text_round_trip():
    cfg = ModelConfig(vocab_size=33, layers=1, lam=0.05, head_activation="relu")
    text = cfg.to_text()
    assert "lambda = 0.05" in text
    assert ModelConfig.from_text(text) == cfg


def test_fuse_point_masses():
    p_d = np.full(6, 1 / 6)
    np.testing.assert_array_equal(fuse([1, 0, 0], p_d, 5), np.eye(6)[BLK])
    np.testing.assert_array_equal(fuse([0, 1, 0], p_d, 5), np.eye(6)[5])


def test_fuse_hand_example():
    # ids: 0 = [BLK], 1 = a, 2 = b, 3 = c
    out = fuse([0.2, 0.5, 0.3], np.full(4, 0.25), 1, blk=0)
    np.testing.assert_allclose(out, [0.2, 0.5, 0.15, 0.15], atol=1e-12)


def test_fuse_sums_to_one_and_is_monotone_in_copy():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p_a = rng.dirichlet(np.ones(3))
        p_d = rng.dirichlet(np.ones(9))
        x = int(rng.integers(3, 9))
        out = fuse(p_a, p_d, x)
        assert abs(out.sum() - 1) < 1e-9
        # raise COPY, shrink the other two proportionally
        bumped = p_a.copy()
        bumped[1] = p_a[1] + 0.5 * (1 - p_a[1])
        rest = p_a[[0, 2]]
        bumped[[0, 2]] = rest / rest.sum() * (1 - bumped[1]) if rest.sum() else 0
        assert fuse(bumped, p_d, x)[x] >= out[x]


def test_fuse_rejects_blank_source():
    with pytest.raises(ValueError):
        fuse([0.3, 0.3, 0.4], np.full(5, 0.2), BLK)


def test_fused_log_probs_agree_with_fuse():
    rng = np.random.default_rng(1)
    tok, act = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 3, 3))
    xt = rng.integers(3, 8, size=(2, 3))
    logp = fused_log_probs(T.Tensor(tok), T.Tensor(act), xt).data
    for b in range(2):
        for k in range(3):
            p_a = np.exp(act[b, k]) / np.exp(act[b, k]).sum()
            p_d = np.exp(tok[b, k]) / np.exp(tok[b, k]).sum()
            np.testing.assert_allclose(np.exp(logp[b, k]), fuse(p_a, p_d, int(xt[b, k])), atol=1e-12)


def test_encode_shape_and_batch_behaviour(tiny_model):
    src = np.array([[5, 6, 7, 1], [5, 6, 7, 1], [8, 9, 1, 4]])
    h = tiny_model.encode(src).data
    assert h.shape == (3, 4, 16)
    np.testing.assert_allclose(h[0], h[1])
    perm = tiny_model.encode(src[[2, 0, 1]]).data
    np.testing.assert_allclose(perm, h[[2, 0, 1]], atol=1e-12)


def test_padding_does_not_leak(tiny_model):
    short = tiny_model.encode(np.array([[8, 9, 1]])).data
    padded = tiny_model.encode(np.array([[8, 9, 1, 4, 4]])).data
    np.testing.assert_allclose(padded[0, :3], short[0], atol=1e-12)


def test_too_long_input_rejected(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.encode(np.full((1, 33), 5))


def test_decoder_is_causal(tiny_model):
    src = np.array([[5, 6, 7, 1]])
    h_e = tiny_model.encode(src)
    mask = tiny_model.source_mask(src)
    y = np.array([[0, 5, 6, 7, 8]])
    base = tiny_model.decode(y, h_e, mask).data
    xt = np.array([[5, 6, 7, 1, 1]])
    p_base = tiny_model.s2a_head(tiny_model.decode(y, h_e, mask), xt).data
    for k in range(4):
        y2 = y.copy()
        y2[0, k + 1] = 11
        out = tiny_model.decode(y2, h_e, mask)
        np.testing.assert_allclose(out.data[0, : k + 1], base[0, : k + 1], atol=1e-12)
        np.testing.assert_allclose(tiny_model.s2a_head(out, xt).data[0, : k + 1], p_base[0, : k + 1], atol=1e-12)
    assert base.shape == (1, 5, 16)


def test_zero_layer_model_is_embedding_plus_position():
    cfg = ModelConfig(vocab_size=12, layers=0, heads=2, d_model=8, d_ff=16, dropout=0.0, max_len=10)
    m = S2AModel(cfg, np.random.default_rng(0))
    y = np.array([[0, 5, 6]])
    h_d = m.decode(y, m.encode(np.array([[5, 1]])), m.source_mask(np.array([[5, 1]]))).data
    expected = m.params["embed"].data[y] * math.sqrt(8) + m.positions[:3]
    np.testing.assert_allclose(h_d, expected, atol=1e-12)


def test_head_rows_sum_to_one_and_uniform_when_zeroed(tiny_model):
    rng = np.random.default_rng(2)
    h_d = T.Tensor(rng.normal(size=(2, 4, 16)))
    xt = rng.integers(5, 12, size=(2, 4))
    p = tiny_model.s2a_head(h_d, xt).data
    assert p.shape == (2, 4, 3)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    tiny_model.params["head.w2"].data[:] = 0
    tiny_model.params["head.b2"].data[:] = 0
    np.testing.assert_allclose(tiny_model.s2a_head(h_d, xt).data, 1 / 3, atol=1e-15)
    with pytest.raises(ValueError):
        tiny_model.s2a_head(h_d, xt[:, :3])


def test_s2a_loss_zero_when_actions_certain(tiny_model):
    # drive the head to a point mass on SKIP / COPY through the output bias
    h_d = T.Tensor(np.zeros((1, 1, 16)))
    for act, y in ((0, BLK), (1, 7)):
        tiny_model.params["head.b2"].data[:] = -1e4
        tiny_model.params["head.b2"].data[act] = 1e4
        assert tiny_model.s2a_loss(h_d, [[7]], [[y]]).item() == pytest.approx(0.0, abs=1e-12)


def test_s2a_loss_two_position_hand_check(tiny_model):
    rng = np.random.default_rng(3)
    h_d = T.Tensor(rng.normal(size=(1, 2, 16)))
    xt, y_out = np.array([[6, 1]]), np.array([[9, 1]])
    p_a = tiny_model.s2a_head(h_d, xt).data[0]
    logits = tiny_model.token_logits(h_d).data[0]
    p_d = np.exp(logits - logits.max(-1, keepdims=True))
    p_d /= p_d.sum(-1, keepdims=True)
    # position 0 generates token 9, position 1 copies [/S]
    rest = np.delete(p_d[0], [BLK, 6])
    gen = p_a[0, 2] * p_d[0, 9] / rest.sum()
    expected = -(math.log(gen) + math.log(p_a[1, 1])) / 2
    assert tiny_model.s2a_loss(h_d, xt, y_out).item() == pytest.approx(expected, abs=1e-12)


def test_joint_loss_mixing(tiny_model):
    batch = tiny_batch()
    h_e = tiny_model.encode(batch.src)
    h_d = tiny_model.decode(batch.y_in, h_e, tiny_model.source_mask(batch.src))
    s2s = tiny_model.seq2seq_loss(h_d, batch.y_out).item()
    s2a = tiny_model.s2a_loss(h_d, batch.x_tilde, batch.y_out).item()
    assert tiny_model.joint_loss(batch, 1.0).item() == pytest.approx(s2s, abs=1e-12)
    assert tiny_model.joint_loss(batch, 0.0).item() == pytest.approx(s2a, abs=1e-12)
    assert tiny_model.joint_loss(batch, 0.4).item() == pytest.approx(0.6 * s2a + 0.4 * s2s, abs=1e-12)
    with pytest.raises(ValueError):
        tiny_model.joint_loss(batch, -0.1)


@pytest.mark.parametrize("lam", [0.0, 0.4, 1.0])
def test_joint_loss_gradients_sampled(tiny_model, lam):
    errors = model_grad_errors(tiny_model, tiny_batch(1), lam, per_param=4)
    assert max(errors.values()) < 1e-4, max(errors.items(), key=lambda kv: kv[1])


def test_relu_head_gradients():
    cfg = ModelConfig(vocab_size=12, layers=1, heads=2, d_model=8, d_ff=16, dropout=0.0, head_activation="relu")
    m = S2AModel(cfg, np.random.default_rng(4))
    errors = model_grad_errors(m, tiny_batch(2), 0.4, per_param=6)
    assert max(errors.values()) < 1e-4


def test_save_load_round_trip(tmp_path, tiny_model):
    tiny_model.save(tmp_path / "m.bin")
    back = S2AModel.load(tmp_path / "m.bin")
    assert back.cfg == tiny_model.cfg
    batch = tiny_batch()
    assert back.joint_loss(batch).item() == tiny_model.joint_loss(batch).item()


def test_load_state_rejects_mismatch(tiny_model):
    state = tiny_model.state()
    state.pop("out.b")
    with pytest.raises(ValueError):
        tiny_model.load_state(state)
