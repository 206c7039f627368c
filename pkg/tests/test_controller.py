import math

import numpy as np
import pytest

from synthsel import controller as ctrl
from synthsel import numkit as nk
from synthsel.errors import ConfigError, DimensionError, ValidationError
from synthsel.numkit import RngStream


def small_config(variant="transformer", **kwargs):
    defaults = dict(
        input_dim=8, class_count=3, variant=variant, model_dim=8, head_count=2,
        key_dim=4, value_dim=4, encoder_layers=2, ffn_hidden_dim=16,
        class_embedding_dim=8,
    )
    defaults.update(kwargs)
    return ctrl.ControllerConfig(**defaults)


def make_params(variant="transformer", seed=5, random_heads=False, **kwargs):
    params = ctrl.init_controller(small_config(variant, **kwargs), RngStream(seed, "controller-init"))
    if random_heads:
        gen = np.random.default_rng(seed + 1000)
        for name in ("policy.w", "policy.b", "value.w", "value.b"):
            t = params.tensors[name]
            t.value[:] = gen.normal(0.0, 0.5, size=t.value.shape)
    return params


# ---------------------------------------------------------------------------
# positional encoding
# ---------------------------------------------------------------------------


def test_positional_encoding_row_zero():
    pe = ctrl.positional_encoding(3, 6)
    assert np.array_equal(pe[0, 0::2], np.zeros(3))
    assert np.array_equal(pe[0, 1::2], np.ones(3))


def test_positional_encoding_direct_value():
    pe = ctrl.positional_encoding(2, 4)
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)
    assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-12)
    assert pe[1, 2] == pytest.approx(math.sin(1.0 / 10000 ** (2 / 4)), abs=1e-12)


def test_positional_encoding_range():
    pe = ctrl.positional_encoding(50, 16)
    assert pe.min() >= -1.0 and pe.max() <= 1.0


def test_positional_encoding_odd_dim_rejected():
    with pytest.raises(ConfigError):
        ctrl.positional_encoding(4, 5)


# ---------------------------------------------------------------------------
# attention blocks
# ---------------------------------------------------------------------------


def test_self_attention_zero_query_gives_column_mean():
    gen = np.random.default_rng(0)
    v = gen.normal(size=(4, 3))
    out = ctrl.self_attention(np.zeros((4, 2)), np.zeros((4, 2)), v, 2)
    mean = v.mean(axis=0)
    assert np.abs(out.value - mean).max() < 1e-12


def test_self_attention_single_row():
    out = ctrl.self_attention(np.ones((1, 2)), np.ones((1, 2)), np.array([[5.0, 7.0]]), 2)
    assert np.allclose(out.value, [[5.0, 7.0]])


def test_self_attention_hand_case():
    # q = k = v = I2, d_k = 2: scores = I/sqrt(2), so each row's own weight is
    # e^(1/sqrt 2) / (e^(1/sqrt 2) + 1)
    eye = np.eye(2)
    out, weights = ctrl.self_attention(eye, eye, eye, 2, return_weights=True)
    own = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1.0)
    assert weights[0, 0] == pytest.approx(own, abs=1e-12)
    assert own == pytest.approx(0.669762, abs=5e-7)
    assert np.allclose(out.value, [[own, 1 - own], [1 - own, own]], atol=1e-12)


def test_self_attention_shape_errors():
    with pytest.raises(DimensionError):
        ctrl.self_attention(np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)), 2)
    with pytest.raises(DimensionError):
        ctrl.self_attention(np.ones((2, 2)), np.ones((3, 2)), np.ones((2, 2)), 2)


def test_multi_head_single_head_identity_projection():
    gen = np.random.default_rng(1)
    x = gen.normal(size=(3, 4))
    wq = wk = wv = np.eye(4)
    out = ctrl.multi_head(x, [(wq, wk, wv)], np.eye(4))
    direct = ctrl.self_attention(x, x, x, 4)
    assert np.abs(out.value - direct.value).max() < 1e-12


def test_multi_head_zero_values():
    gen = np.random.default_rng(2)
    x = gen.normal(size=(3, 4))
    heads = [(np.eye(4), np.eye(4), np.zeros((4, 4))) for _ in range(2)]
    out = ctrl.multi_head(x, heads, np.ones((8, 4)))
    assert np.abs(out.value).max() == 0.0


def test_multi_head_matches_hand_composition():
    gen = np.random.default_rng(3)
    x = gen.normal(size=(3, 4))
    heads = [tuple(gen.normal(size=(4, 2)) for _ in range(3)) for _ in range(2)]
    wo = gen.normal(size=(4, 4))
    out = ctrl.multi_head(x, heads, wo)
    # independent composition with plain numpy
    parts = []
    for wq, wk, wv in heads:
        q, k, v = x @ wq, x @ wk, x @ wv
        weights = nk.softmax_rows(q @ k.T / math.sqrt(2))
        parts.append(weights @ v)
    expected = np.concatenate(parts, axis=1) @ wo
    assert np.abs(out.value - expected).max() < 1e-12


def test_feed_forward_zero_weights_give_bias():
    x = np.random.default_rng(4).normal(size=(3, 4))
    b2 = np.array([[1.0, 2.0, 3.0, 4.0]])
    out = ctrl.feed_forward(x, np.zeros((4, 6)), np.zeros((1, 6)), np.zeros((6, 4)), b2)
    assert np.allclose(out.value, np.repeat(b2, 3, axis=0))


def test_feed_forward_relu_kills_negative_preactivation():
    x = np.ones((2, 3))
    w1 = -np.ones((3, 5))
    b2 = np.array([[0.5, -0.5]])
    out = ctrl.feed_forward(x, w1, np.zeros((1, 5)), np.ones((5, 2)), b2)
    assert np.allclose(out.value, np.repeat(b2, 2, axis=0))


def test_feed_forward_hand_case():
    x = np.array([[1.0, -1.0, 2.0], [0.0, 1.0, -1.0]])
    w1 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b1 = np.array([[0.1, -0.2]])
    w2 = np.array([[1.0], [2.0]])
    b2 = np.array([[0.5]])
    hidden = np.maximum(x @ w1 + b1, 0.0)
    expected = hidden @ w2 + b2
    out = ctrl.feed_forward(x, w1, b1, w2, b2)
    assert np.abs(out.value - expected).max() < 1e-15


# ---------------------------------------------------------------------------
# encoder forward
# ---------------------------------------------------------------------------


def test_encoder_output_shapes():
    params = make_params()
    gen = np.random.default_rng(5)
    out = ctrl.encoder_forward(gen.normal(size=(6, 8)), [0, 1, 2, 0, 1, 2], params)
    assert out.logits.shape == (6, 2)
    assert isinstance(out.value, float)
    assert len(out.attention_weights) == 4  # 2 layers x 2 heads


def test_encoder_attention_rows_sum_to_one():
    params = make_params()
    gen = np.random.default_rng(6)
    out = ctrl.encoder_forward(gen.normal(size=(5, 8)), [0] * 5, params)
    for weights in out.attention_weights:
        assert np.abs(weights.sum(axis=1) - 1.0).max() <= 1e-12


def test_encoder_permutation_equivariance_without_positions():
    params = make_params(random_heads=True)
    gen = np.random.default_rng(7)
    seq = gen.normal(size=(6, 8))
    classes = np.array([0, 1, 2, 0, 1, 2])
    perm = np.array([3, 0, 5, 1, 4, 2])
    base = ctrl.encoder_forward(seq, classes, params, use_positions=False)
    permuted = ctrl.encoder_forward(seq[perm], classes[perm], params, use_positions=False)
    assert np.abs(permuted.logits - base.logits[perm]).max() <= 1e-9
    assert abs(permuted.value - base.value) <= 1e-9


def test_encoder_positions_break_equivariance():
    params = make_params(random_heads=True)
    gen = np.random.default_rng(8)
    seq = gen.normal(size=(6, 8))
    classes = np.array([0, 1, 2, 0, 1, 2])
    perm = np.array([3, 0, 5, 1, 4, 2])
    base = ctrl.encoder_forward(seq, classes, params, use_positions=True)
    permuted = ctrl.encoder_forward(seq[perm], classes[perm], params, use_positions=True)
    assert np.abs(permuted.logits - base.logits[perm]).max() > 1e-6


def test_encoder_zero_policy_head_gives_uniform_keep_probability():
    params = make_params()
    gen = np.random.default_rng(9)
    out = ctrl.encoder_forward(gen.normal(size=(4, 8)), [0, 1, 2, 0], params)
    assert np.abs(out.logits).max() == 0.0
    probs = nk.softmax_rows(out.logits)
    assert np.all(probs == 0.5)
    actions, _ = ctrl.sample_actions(out.logits, RngStream(0, "action-sample"), "greedy")
    assert actions.sum() == 0


def test_encoder_rejects_bad_class_id():
    params = make_params()
    with pytest.raises(ValidationError):
        ctrl.encoder_forward(np.zeros((2, 8)), [0, 7], params)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(model_dim=10)  # != head_count * value_dim
    with pytest.raises(ConfigError):
        small_config(class_embedding_dim=4)
    with pytest.raises(ConfigError):
        small_config(variant="mlp")


# ---------------------------------------------------------------------------
# GRU variants
# ---------------------------------------------------------------------------


def _gru_cell_oracle(x, h, p):
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    z = sig(x @ p["wxz"].value + h @ p["whz"].value + p["bz"].value)
    r = sig(x @ p["wxr"].value + h @ p["whr"].value + p["br"].value)
    cand = np.tanh(x @ p["wxh"].value + (r * h) @ p["whh"].value + p["bh"].value)
    return (1 - z) * h + z * cand


def _tiny_gru_params(seed=11, m=2):
    gen = np.random.default_rng(seed)
    return {
        name: nk.parameter(gen.normal(size=(1, m) if name.startswith("b") else (m, m)), name)
        for name in ("wxz", "whz", "bz", "wxr", "whr", "br", "wxh", "whh", "bh")
    }


def test_gru_cell_three_step_scan_matches_unrolled_oracle():
    p = _tiny_gru_params()
    gen = np.random.default_rng(12)
    xs = gen.normal(size=(3, 2))
    h_tape = nk.constant(np.zeros((1, 2)))
    h_hand = np.zeros((1, 2))
    for t in range(3):
        h_tape = ctrl.gru_cell(nk.constant(xs[t:t + 1]), h_tape, p)
        h_hand = _gru_cell_oracle(xs[t:t + 1], h_hand, p)
        assert np.abs(h_tape.value - h_hand).max() < 1e-12


def test_gru_forward_length_one_is_single_step():
    params = make_params("gru")
    gen = np.random.default_rng(13)
    seq = gen.normal(size=(1, 8))
    out = ctrl.gru_forward(seq, [1], params, use_positions=False)
    t = params.tensors
    x = seq @ t["input_proj.w"].value + t["input_proj.b"].value + t["class_emb"].value[1]
    gates = {name.split(".", 1)[1]: t[name] for name in t if name.startswith("gru.")}
    h = _gru_cell_oracle(x, np.zeros((1, 8)), gates)
    expected_logits = h @ t["policy.w"].value + t["policy.b"].value
    assert np.abs(out.logits - expected_logits).max() < 1e-12


def test_gru_saturated_update_gate_keeps_zero_state():
    params = make_params("gru")
    params.tensors["gru.bz"].value[:] = -50.0  # update gate ~ 0 everywhere
    gen = np.random.default_rng(14)
    out = ctrl.gru_forward(gen.normal(size=(5, 8)), [0] * 5, params, use_positions=False)
    # hidden stays ~0, so logits collapse to the policy bias (zero-initialized)
    assert np.abs(out.logits).max() < 1e-15


def test_gru_attention_value_head_differs_from_plain():
    plain = make_params("gru", seed=21)
    attn = make_params("gru-attn", seed=21)
    attn.tensors["value.w"].value[:] = 0.7
    plain.tensors["value.w"].value[:] = 0.7
    gen = np.random.default_rng(15)
    seq = gen.normal(size=(4, 8))
    out_plain = ctrl.gru_forward(seq, [0, 1, 2, 0], plain, attention=False)
    out_attn = ctrl.gru_forward(seq, [0, 1, 2, 0], attn, attention=True)
    assert out_plain.value != out_attn.value
    assert len(out_attn.attention_weights) == 1
    assert np.abs(out_attn.attention_weights[0].sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# action sampling
# ---------------------------------------------------------------------------


def test_sample_actions_greedy_tie_discards():
    actions, logp = ctrl.sample_actions(np.zeros((3, 2)), RngStream(0, "action-sample"), "greedy")
    assert actions.tolist() == [0, 0, 0]
    assert np.allclose(np.exp(logp), 0.5)


def test_sample_actions_saturated_logits():
    logits = np.array([[-1000.0, 1000.0]])
    for mode in ("stochastic", "greedy"):
        actions, logp = ctrl.sample_actions(logits, RngStream(1, "action-sample"), mode)
        assert actions.tolist() == [1]
        assert logp[0] == pytest.approx(0.0, abs=1e-12)


def test_sample_actions_monte_carlo_keep_rate():
    gen = RngStream(123, "action-sample").generator()
    actions, _ = ctrl.sample_actions(np.zeros((100_000, 2)), gen, "stochastic")
    assert actions.mean() == pytest.approx(0.5, abs=0.01)


def test_sample_actions_log_prob_matches_probability_exactly():
    gen = np.random.default_rng(16)
    logits = gen.normal(size=(50, 2))
    probs = np.exp(nk.log_softmax_rows(logits))
    actions, logp = ctrl.sample_actions(logits, RngStream(2, "action-sample"), "stochastic")
    chosen = probs[np.arange(50), actions]
    assert np.array_equal(np.exp(logp), chosen)


def test_sample_actions_deterministic_given_stream():
    logits = np.random.default_rng(17).normal(size=(20, 2))
    a1, l1 = ctrl.sample_actions(logits, RngStream(3, "action-sample"), "stochastic")
    a2, l2 = ctrl.sample_actions(logits, RngStream(3, "action-sample"), "stochastic")
    assert np.array_equal(a1, a2) and np.array_equal(l1, l2)


# ---------------------------------------------------------------------------
# per-class sequences and checkpoints
# ---------------------------------------------------------------------------


def test_per_class_sequences_merge_preserves_row_order():
    base = make_params(seed=30)
    split = ctrl.ControllerParams(
        ctrl.ControllerConfig(**{**base.config.__dict__, "per_class_sequences": True}),
        base.tensors,
    )
    gen = np.random.default_rng(18)
    seq = gen.normal(size=(6, 8))
    classes = np.array([2, 0, 1, 0, 2, 1])
    merged = ctrl.forward(split, seq, classes)
    for c in (0, 1, 2):
        idx = np.flatnonzero(classes == c)
        direct = ctrl.forward(base, seq[idx], classes[idx])
        assert np.abs(merged.logits[idx] - direct.logits).max() < 1e-12


def test_checkpoint_round_trip_bit_exact(tmp_path):
    params = make_params(seed=31)
    gen = np.random.default_rng(19)
    for t in params.tensors.values():
        t.value[:] = gen.normal(size=t.value.shape)
    path = tmp_path / "controller.npz"
    ctrl.save_checkpoint(params, path)
    loaded = ctrl.load_checkpoint(path)
    assert loaded.config == params.config
    assert set(loaded.tensors) == set(params.tensors)
    for name, t in params.tensors.items():
        assert np.array_equal(loaded.tensors[name].value, t.value)


def test_unresolved_config_rejected_at_init():
    with pytest.raises(ConfigError):
        ctrl.init_controller(ctrl.ControllerConfig(0, 0), RngStream(0, "controller-init"))
