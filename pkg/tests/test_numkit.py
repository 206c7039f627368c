import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synthsel import numkit as nk
from synthsel.errors import ConfigError, DimensionError, NumericError


# ---------------------------------------------------------------------------
# plain matrix ops
# ---------------------------------------------------------------------------


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nk.matmul(np.eye(2), m), m)


def test_matmul_annihilator():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nk.matmul(np.zeros((2, 2)), m), np.zeros((2, 2)))


def test_matmul_hand_case():
    # hand arithmetic: [1*5+2*6, 3*5+4*6]
    out = nk.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]]))
    assert np.array_equal(out, np.array([[17.0], [39.0]]))


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        nk.matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_matmul_associativity():
    gen = np.random.default_rng(0)
    a, b, c = (gen.normal(size=(8, 8)) for _ in range(3))
    left = nk.matmul(nk.matmul(a, b), c)
    right = nk.matmul(a, nk.matmul(b, c))
    assert np.abs(left - right).max() / np.abs(left).max() < 1e-9


def test_softmax_uniform_row():
    out = nk.softmax_rows(np.zeros((1, 4)))
    assert np.allclose(out, 0.25, atol=1e-15)


def test_softmax_no_overflow():
    out = nk.softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out))
    assert out[0, 0] > 1.0 - 1e-12


def test_softmax_closed_form():
    # softmax([0, ln 3]) = [1, 3] / 4
    out = nk.softmax_rows(np.array([[0.0, math.log(3.0)]]))
    assert np.allclose(out, [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(m):
    out = nk.softmax_rows(m)
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-12


def test_relu_cases():
    assert np.array_equal(nk.relu(np.array([[-1.0, 0.0, 2.0]])), [[0.0, 0.0, 2.0]])
    assert np.array_equal(nk.relu(-np.ones((3, 3))), np.zeros((3, 3)))


def test_relu_idempotent():
    m = np.random.default_rng(1).normal(size=(4, 4))
    assert np.array_equal(nk.relu(nk.relu(m)), nk.relu(m))


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def test_rng_stream_reproduces():
    a = nk.RngStream(7, "data-gen").generator().random(16)
    b = nk.RngStream(7, "data-gen").generator().random(16)
    assert np.array_equal(a, b)


def test_rng_streams_differ_by_id():
    a = nk.RngStream(7, "data-gen").generator().random(16)
    b = nk.RngStream(7, "classifier").generator().random(16)
    assert not np.array_equal(a, b)


def test_rng_streams_differ_by_seed():
    a = nk.RngStream(7, "data-gen").generator().random(16)
    b = nk.RngStream(8, "data-gen").generator().random(16)
    assert not np.array_equal(a, b)


def test_derive_seed_deterministic():
    assert nk.derive_seed(3, 5) == nk.derive_seed(3, 5)
    assert nk.derive_seed(3, 5) != nk.derive_seed(5, 3)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


def test_grad_check_square():
    w = nk.parameter([[3.0]], "w")
    err = nk.grad_check(lambda: nk.t_mul(w, w), [w])
    assert err < 1e-9
    # analytic gradient is 2w = 6
    nk.zero_grads([w])
    nk.backward(nk.t_mul(w, w))
    assert abs(w.grad[0, 0] - 6.0) < 1e-12


def test_grad_check_constant_function():
    w = nk.parameter([[2.0]], "w")
    err = nk.grad_check(lambda: nk.constant([[5.0]]), [w])
    assert err == 0.0


def test_grad_check_attention_composite():
    gen = np.random.default_rng(2)
    from synthsel.controller import self_attention

    q = nk.parameter(gen.normal(size=(4, 8)), "q")
    k = nk.parameter(gen.normal(size=(4, 8)), "k")
    v = nk.parameter(gen.normal(size=(4, 8)), "v")
    err = nk.grad_check(lambda: nk.t_sum_all(self_attention(q, k, v, 8)), [q, k, v])
    assert err < 1e-5


def test_grad_check_epsilon_bounds():
    w = nk.parameter([[1.0]], "w")
    with pytest.raises(ConfigError):
        nk.grad_check(lambda: nk.t_mul(w, w), [w], epsilon=1e-2)


def test_grad_check_nonfinite_function():
    w = nk.parameter([[0.0]], "w")
    with pytest.raises(NumericError):
        nk.grad_check(lambda: nk.t_log(w), [w])


def test_backward_needs_scalar():
    w = nk.parameter(np.ones((2, 2)), "w")
    with pytest.raises(DimensionError):
        nk.backward(nk.t_relu(w))


def test_grads_accumulate_until_zeroed():
    w = nk.parameter([[2.0]], "w")
    nk.backward(nk.t_mul(w, w))
    nk.backward(nk.t_mul(w, w))
    assert abs(w.grad[0, 0] - 8.0) < 1e-12
    nk.zero_grads([w])
    assert w.grad[0, 0] == 0.0


@pytest.mark.parametrize("name,build,shapes", [
    ("matmul", lambda ps: nk.t_matmul(ps[0], ps[1]), [(3, 4), (4, 2)]),
    ("add", lambda ps: nk.t_add(ps[0], ps[1]), [(3, 4), (3, 4)]),
    ("add_bias", lambda ps: nk.t_add(ps[0], ps[1]), [(3, 4), (1, 4)]),
    ("sub", lambda ps: nk.t_sub(ps[0], ps[1]), [(3, 4), (3, 4)]),
    ("mul", lambda ps: nk.t_mul(ps[0], ps[1]), [(3, 4), (3, 4)]),
    ("scale", lambda ps: nk.t_scale(ps[0], -2.5), [(3, 4)]),
    ("transpose", lambda ps: nk.t_transpose(ps[0]), [(3, 4)]),
    ("relu", lambda ps: nk.t_relu(ps[0]), [(3, 4)]),
    ("tanh", lambda ps: nk.t_tanh(ps[0]), [(3, 4)]),
    ("sigmoid", lambda ps: nk.t_sigmoid(ps[0]), [(3, 4)]),
    ("exp", lambda ps: nk.t_exp(ps[0]), [(3, 4)]),
    ("softmax", lambda ps: nk.t_softmax_rows(ps[0]), [(3, 4)]),
    ("log_softmax", lambda ps: nk.t_log_softmax_rows(ps[0]), [(3, 4)]),
    ("layer_norm", lambda ps: nk.t_layer_norm_rows(ps[0], ps[1], ps[2]),
     [(3, 4), (1, 4), (1, 4)]),
    ("mean_over_rows", lambda ps: nk.t_mean_over_rows(ps[0]), [(3, 4)]),
    ("sum_over_cols", lambda ps: nk.t_sum_over_cols(ps[0]), [(3, 4)]),
    ("concat_cols", lambda ps: nk.t_concat_cols(ps), [(3, 2), (3, 3)]),
    ("concat_rows", lambda ps: nk.t_concat_rows(ps), [(2, 4), (3, 4)]),
    ("row", lambda ps: nk.t_row(ps[0], 1), [(3, 4)]),
    ("permute", lambda ps: nk.t_permute_rows(ps[0], [2, 0, 1]), [(3, 4)]),
    ("gather", lambda ps: nk.t_gather_rows(ps[0], [0, 2, 2, 1]), [(3, 4)]),
    ("pick", lambda ps: nk.t_pick(ps[0], [0, 1, 2], [1, 3, 0]), [(3, 4)]),
    ("minimum", lambda ps: nk.t_minimum(ps[0], ps[1]), [(3, 4), (3, 4)]),
    ("clip", lambda ps: nk.t_clip(ps[0], -0.5, 0.5), [(3, 4)]),
])
def test_op_gradients(name, build, shapes):
    gen = np.random.default_rng(hash(name) % 2**32)
    params = [nk.parameter(gen.normal(size=s), f"p{i}") for i, s in enumerate(shapes)]

    def loss():
        out = build(params)
        # weight entries so reductions of row-stochastic outputs stay non-constant
        weights = np.random.default_rng(0).normal(size=out.value.shape)
        return nk.t_mean_all(nk.t_mul(out, nk.constant(weights)))

    assert nk.grad_check(loss, params) < 1e-6


def test_deep_graph_backward_no_recursion_limit():
    # GRU-style scans chain thousands of nodes; backward must not recurse.
    w = nk.parameter([[1.0]], "w")
    node = w
    for _ in range(5000):
        node = nk.t_scale(node, 1.0)
    nk.backward(node)
    assert w.grad[0, 0] == 1.0


def test_parameter_requires_name():
    with pytest.raises(ConfigError):
        nk.parameter([[1.0]], "")
