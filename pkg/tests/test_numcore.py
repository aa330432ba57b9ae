import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from planwrite import numcore as nc
from gradcheck import max_relative_error

TOL = 1e-4


def rand(rng, *shape, scale=1.0):
    return rng.normal(0.0, scale, size=shape)


# -- softmax -----------------------------------------------------------------


def test_softmax_symmetric():
    g = nc.Graph(grad=False)
    np.testing.assert_allclose(g.softmax(g.const([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_ln2():
    with nc.float64():
        g = nc.Graph(grad=False)
        np.testing.assert_allclose(g.softmax(g.const([math.log(2), 0.0])).data, [2 / 3, 1 / 3], rtol=1e-12)


def test_softmax_random_sums_to_one():
    rng = np.random.default_rng(3)
    with nc.float64():
        g = nc.Graph(grad=False)
        p = g.softmax(g.const(rand(rng, 7, scale=5.0))).data
    assert abs(math.fsum(p) - 1.0) < 1e-9


def test_softmax_mask_exact_zero():
    g = nc.Graph(grad=False)
    p = g.softmax(g.const([3.0, 1.0, 2.0]), np.array([True, False, True])).data
    assert p[1] == 0.0
    assert abs(p.sum() - 1) < 1e-6


def test_softmax_empty_support():
    g = nc.Graph(grad=False)
    with pytest.raises(ValueError, match="empty support"):
        g.softmax(g.const([1.0, 2.0]), np.array([False, False]))


def test_softmax_large_scores_stable():
    g = nc.Graph(grad=False)
    p = g.softmax(g.const([1000.0, 999.0])).data
    assert np.all(np.isfinite(p))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.data())
def test_softmax_property(scores, data):
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores))))
    if not mask.any():
        mask[0] = True
    with nc.float64():
        g = nc.Graph(grad=False)
        p = g.softmax(g.const(scores), mask).data
    assert np.all((p >= 0) & (p <= 1))
    assert abs(p.sum() - 1) < 1e-6
    assert np.all(p[~mask] == 0)


def test_logsumexp_matches_log_of_sum():
    rng = np.random.default_rng(0)
    with nc.float64():
        x = rand(rng, 3, 5)
        mask = rng.random((3, 5)) < 0.6
        mask[:, 0] = True
        g = nc.Graph(grad=False)
        out = g.logsumexp(g.const(x), mask).data
    expected = np.log(np.where(mask, np.exp(x), 0).sum(axis=1))
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_log_sigmoid_extremes_finite():
    g = nc.Graph(grad=False)
    out = g.log_sigmoid(g.const([-800.0, 0.0, 800.0])).data
    assert np.all(np.isfinite(out))
    assert abs(out[1] - math.log(0.5)) < 1e-6


# -- backward basics ---------------------------------------------------------


def test_backward_square():
    g = nc.Graph()
    x = g.param("x", np.array(3.0))
    assert g.backward(g.mul(x, x))["x"] == pytest.approx(6.0)


def test_backward_sigmoid_quarter():
    g = nc.Graph()
    w = g.param("w", np.zeros(4))
    grads = g.backward(g.sum(g.sigmoid(w)))
    np.testing.assert_allclose(grads["w"], 0.25)


def test_backward_rejects_vector_loss():
    g = nc.Graph()
    w = g.param("w", np.ones(3))
    with pytest.raises(ValueError):
        g.backward(g.relu(w))


def test_unreachable_param_gets_zero():
    g = nc.Graph()
    a = g.param("a", np.ones(2))
    g.param("b", np.ones(3))
    grads = g.backward(g.sum(a))
    np.testing.assert_array_equal(grads["b"], np.zeros(3))


def test_nodes_are_append_only_and_topological():
    g = nc.Graph()
    a = g.param("a", np.ones(2))
    b = g.relu(a)
    c = g.sum(g.mul(b, b))
    ids = {id(n): i for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        for p in n.parents:
            if id(p) in ids:
                assert ids[id(p)] < ids[id(n)]
    assert g.nodes[-1] is c


def test_non_finite_forward_raises():
    with nc.float64(), np.errstate(over="ignore"):
        g = nc.Graph()
        with pytest.raises(FloatingPointError):
            g.mul(g.const([1e308]), g.const([1e308]))


def test_embedding_out_of_range():
    g = nc.Graph()
    t = g.param("t", np.ones((3, 2)))
    with pytest.raises(IndexError):
        g.embedding(t, np.array([3]))


def test_forward_bit_identical():
    rng = np.random.default_rng(1)
    x, w = rand(rng, 2, 4), rand(rng, 3, 4)

    def run():
        g = nc.Graph()
        return g.softmax(g.tanh(g.matmul(g.const(x), g.param("w", w), trans_b=True))).data.tobytes()

    assert run() == run()


# -- finite-difference checks per op -------------------------------------------


def op_cases(rng):
    mask = np.array([[True, False, True, True], [False, True, True, False]])
    pick = np.array([2, 1])
    ids = np.array([[0, 2], [1, 1]])
    return {
        "add": (lambda g, W: g.sum(g.mul(g.add(W["a"], W["v"]), W["c"])), ["a", "v", "c"]),
        "sub": (lambda g, W: g.sum(g.mul(g.sub(W["a"], W["v"]), W["c"])), ["a", "v", "c"]),
        "mul_scale": (lambda g, W: g.sum(g.scale(g.mul(W["a"], W["c"]), -1.7)), ["a", "c"]),
        "matmul": (lambda g, W: g.sum(g.tanh(g.matmul(W["a"], W["m"]))), ["a", "m"]),
        "matmul_t": (lambda g, W: g.sum(g.tanh(g.matmul(W["a"], W["mt"], trans_b=True))), ["a", "mt"]),
        "matmul_batched": (lambda g, W: g.sum(g.tanh(g.matmul(W["t3"], W["m"]))), ["t3", "m"]),
        "relu": (lambda g, W: g.sum(g.mul(g.relu(W["a"]), W["c"])), ["a", "c"]),
        "sigmoid": (lambda g, W: g.sum(g.mul(g.sigmoid(W["a"]), W["c"])), ["a", "c"]),
        "tanh": (lambda g, W: g.sum(g.mul(g.tanh(W["a"]), W["c"])), ["a", "c"]),
        "log": (lambda g, W: g.sum(g.log(g.sigmoid(W["a"]))), ["a"]),
        "softmax": (lambda g, W: g.sum(g.mul(g.softmax(W["a"], mask), W["c"])), ["a", "c"]),
        "logsumexp": (lambda g, W: g.sum(g.mul(g.logsumexp(W["a"], mask), W["v2"])), ["a", "v2"]),
        "log_sigmoid": (lambda g, W: g.sum(g.mul(g.log_sigmoid(W["a"]), W["c"])), ["a", "c"]),
        "dropout": (lambda g, W: g.sum(g.mul(g.dropout(W["a"], DROP_MASK), W["c"])), ["a", "c"]),
        "concat_slice": (lambda g, W: g.sum(g.tanh(g.slice(g.concat([W["a"], W["c"]]), 2, 7))), ["a", "c"]),
        "stack_reshape": (lambda g, W: g.sum(g.tanh(g.reshape(g.stack([W["a"], W["c"]]), (2, 8)))), ["a", "c"]),
        "sum_axis": (lambda g, W: g.sum(g.tanh(g.sum(W["t3"], axis=1))), ["t3"]),
        "embedding": (lambda g, W: g.sum(g.tanh(g.embedding(W["m"], ids))), ["m"]),
        "gather": (lambda g, W: g.sum(g.tanh(g.gather(W["a"], pick))), ["a"]),
        "log_pick": (lambda g, W: g.sum(g.log(g.gather(g.softmax(g.relu(g.matmul(W["a"], W["m"]))), pick))),
                     ["a", "m"]),
    }


DROP_MASK = np.array([[2.0, 0.0, 2.0, 2.0], [0.0, 2.0, 2.0, 0.0]])


def op_arrays(rng):
    return {"a": rand(rng, 2, 4), "c": rand(rng, 2, 4), "v": rand(rng, 4), "v2": rand(rng, 2),
            "m": rand(rng, 4, 4), "mt": rand(rng, 3, 4), "t3": rand(rng, 2, 3, 4)}


@pytest.mark.parametrize("op", list(op_cases(None)))
def test_op_gradient(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    arrays = op_arrays(rng)
    build, names = op_cases(rng)[op]
    err, where = max_relative_error(build, {k: arrays[k] for k in names})
    assert err < TOL, where


# -- LSTM ----------------------------------------------------------------------


def _lstm(rng, d_in=3, n=4, batch=2):
    return {"x": rand(rng, batch, d_in), "h": rand(rng, batch, n, scale=0.5), "c": rand(rng, batch, n, scale=0.5),
            "W": rand(rng, 4 * n, d_in + n, scale=0.5), "b": rand(rng, 4 * n, scale=0.5)}


def test_lstm_zero_weights_give_zero_state():
    g = nc.Graph(grad=False)
    n = 5
    zero = g.const(np.zeros((1, n)))
    s = nc.lstm_step(g, g.const(np.ones((1, 3))), nc.LstmState(zero, zero),
                     g.const(np.zeros((4 * n, 3 + n))), g.const(np.zeros(4 * n)))
    np.testing.assert_array_equal(s.hidden.data, 0)
    np.testing.assert_array_equal(s.cell.data, 0)


def test_lstm_input_state_unmodified():
    rng = np.random.default_rng(0)
    a = _lstm(rng)
    g = nc.Graph()
    state = nc.LstmState(g.const(a["h"]), g.const(a["c"]))
    before = (state.hidden.data.copy(), state.cell.data.copy())
    nc.lstm_step(g, g.const(a["x"]), state, g.param("W", a["W"]), g.param("b", a["b"]))
    np.testing.assert_array_equal(state.hidden.data, before[0])
    np.testing.assert_array_equal(state.cell.data, before[1])


def test_lstm_shape_mismatch():
    rng = np.random.default_rng(0)
    a = _lstm(rng)
    g = nc.Graph()
    state = nc.LstmState(g.const(a["h"]), g.const(a["c"]))
    with pytest.raises(ValueError):
        nc.lstm_step(g, g.const(np.ones((2, 5))), state, g.const(a["W"]), g.const(a["b"]))


def test_lstm_state_width_mismatch():
    g = nc.Graph()
    with pytest.raises(ValueError):
        nc.LstmState(g.const(np.zeros((1, 3))), g.const(np.zeros((1, 4))))


def test_lstm_gradient():
    rng = np.random.default_rng(5)
    a = _lstm(rng)

    def build(g, W):
        s = nc.lstm_step(g, W["x"], nc.LstmState(W["h"], W["c"]), W["W"], W["b"])
        return g.sum(s.hidden)

    err, where = max_relative_error(build, a)
    assert err < TOL, where


def test_lstm_cell_shrinks_with_zero_forget_bias():
    # zero input and zero weights: forget gate sigmoid(0)=0.5, candidate 0
    n = 4
    g = nc.Graph(grad=False)
    rng = np.random.default_rng(2)
    state = nc.LstmState(g.const(np.zeros((1, n))), g.const(rand(rng, 1, n)))
    W = g.const(np.zeros((4 * n, 2 + n)))
    b = g.const(np.zeros(4 * n))
    mags = [np.abs(state.cell.data)]
    for _ in range(3):
        state = nc.lstm_step(g, g.const(np.zeros((1, 2))), state, W, b)
        mags.append(np.abs(state.cell.data))
    for before, after in zip(mags, mags[1:]):
        assert np.all(after <= before)


# -- bidirectional encoder ------------------------------------------------------


def _bilstm_params(rng, d=3, n=4):
    return {"fW": rand(rng, 4 * n, d + n, scale=0.5), "fb": rand(rng, 4 * n, scale=0.5),
            "bW": rand(rng, 4 * n, d + n, scale=0.5), "bb": rand(rng, 4 * n, scale=0.5)}


def _encode(g, W, x, lengths, index=None):
    return nc.bilstm_encode(g, x, lengths, (W["fW"], W["fb"]), (W["bW"], W["bb"]), index)


def test_bilstm_length_one_reads_same_element():
    rng = np.random.default_rng(0)
    p = _bilstm_params(rng)
    p["bW"], p["bb"] = p["fW"], p["fb"]
    g = nc.Graph(grad=False)
    W = {k: g.const(v) for k, v in p.items()}
    out, f_last, b_last = _encode(g, W, g.const(rand(rng, 1, 1, 3)), np.array([1]))
    np.testing.assert_allclose(out.data[0, 0, :4], out.data[0, 0, 4:])
    np.testing.assert_allclose(f_last.hidden.data, b_last.hidden.data)


def test_bilstm_reverse_swaps_halves():
    rng = np.random.default_rng(1)
    p = _bilstm_params(rng)
    x = rand(rng, 1, 5, 3)
    g = nc.Graph(grad=False)
    W = {k: g.const(v) for k, v in p.items()}
    swapped = {"fW": W["bW"], "fb": W["bb"], "bW": W["fW"], "bb": W["fb"]}
    out, _, _ = _encode(g, W, g.const(x), np.array([5]))
    rev, _, _ = _encode(g, swapped, g.const(x[:, ::-1].copy()), np.array([5]))
    np.testing.assert_allclose(out.data[0, :, :4], rev.data[0, ::-1, 4:], rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(out.data[0, :, 4:], rev.data[0, ::-1, :4], rtol=1e-5, atol=1e-6)


def test_bilstm_padding_matches_unpadded():
    rng = np.random.default_rng(4)
    p = _bilstm_params(rng)
    x = rand(rng, 2, 5, 3)
    with nc.float64():
        g = nc.Graph(grad=False)
        W = {k: g.const(v) for k, v in p.items()}
        batched, bf, bb = _encode(g, W, g.const(x), np.array([5, 3]))
        alone, af, ab = _encode(g, W, g.const(x[1:, :3]), np.array([3]))
    np.testing.assert_allclose(batched.data[1, :3], alone.data[0], atol=1e-12)
    np.testing.assert_allclose(bf.hidden.data[1], af.hidden.data[0], atol=1e-12)
    np.testing.assert_allclose(bb.hidden.data[1], ab.hidden.data[0], atol=1e-12)


def test_bilstm_empty_rejected():
    rng = np.random.default_rng(0)
    p = _bilstm_params(rng)
    g = nc.Graph(grad=False)
    W = {k: g.const(v) for k, v in p.items()}
    with pytest.raises(ValueError):
        _encode(g, W, g.const(np.zeros((1, 0, 3))), np.array([0]))


def test_bilstm_gradient_length_three():
    rng = np.random.default_rng(7)
    arrays = _bilstm_params(rng)
    arrays["x"] = rand(rng, 1, 3, 3)

    def build(g, W):
        out, f, b = _encode(g, W, W["x"], np.array([3]))
        return g.add(g.sum(g.tanh(out)), g.sum(g.mul(f.cell, b.hidden)))

    err, where = max_relative_error(build, arrays)
    assert err < TOL, where


def test_float64_switch_restores():
    before = nc.get_dtype()
    with nc.float64():
        assert nc.get_dtype() == np.float64
    assert nc.get_dtype() == before
