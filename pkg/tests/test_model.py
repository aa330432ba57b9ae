import numpy as np
import pytest

from planwrite import numcore as nc
from planwrite.corpus import generate_corpus
from planwrite.datamodel import build_vocabulary
from planwrite.model import (
    CONDITIONAL, JOINT, EncodedTable, ModelConfig, ModelParams, content_select, copy_split, decode_step, decoder_start,
    encode_plan, encode_records, fingerprint, forward, gold_loglik, make_batch, marginal_ext, plan_init, plan_step,
    planner_mask, start_input, teacher_forced_accuracy,
)
from gradcheck import max_directional_error, max_relative_error
from tiny import random_table_params, tiny_example, tiny_params


def bound(params, grad=False):
    g = nc.Graph(grad=grad)
    return g, params.bind(g)


def test_config_rejects_unknown_copy():
    with pytest.raises(ValueError):
        ModelConfig(copy_mode="pointer")


def test_initialize_deterministic():
    _, a = tiny_params(seed=3)
    _, b = tiny_params(seed=3)
    assert fingerprint(a) == fingerprint(b)
    _, c = tiny_params(seed=4)
    assert fingerprint(a) != fingerprint(c)


# -- content selection -----------------------------------------------------------


def test_gate_in_open_interval():
    rng = np.random.default_rng(0)
    with nc.float64():
        params, ids = random_table_params(rng, 6)
        g, W = bound(params)
        enc = content_select(g, W, encode_records(g, W, ids), np.ones((1, 6), bool))
    assert np.all((enc.gate.data > 0) & (enc.gate.data < 1))


def test_alpha_excludes_self_and_sums_to_one():
    rng = np.random.default_rng(1)
    with nc.float64():
        params, ids = random_table_params(rng, 5)
        g, W = bound(params)
        enc = content_select(g, W, encode_records(g, W, ids), np.ones((1, 5), bool))
    alpha = enc.alpha.data[0]
    np.testing.assert_array_equal(np.diag(alpha), 0.0)
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)


def test_no_gate_is_identity():
    rng = np.random.default_rng(2)
    params, ids = random_table_params(rng, 4, use_gate=False)
    g, W = bound(params)
    raw = encode_records(g, W, ids)
    enc = content_select(g, W, raw, np.ones((1, 4), bool), use_gate=False)
    assert enc.selected.data.tobytes() == raw.data.tobytes()


def test_gate_needs_two_records():
    rng = np.random.default_rng(2)
    params, ids = random_table_params(rng, 1)
    g, W = bound(params)
    with pytest.raises(ValueError):
        content_select(g, W, encode_records(g, W, ids), np.ones((1, 1), bool))


def test_padding_does_not_change_selection():
    rng = np.random.default_rng(3)
    with nc.float64():
        params, ids = random_table_params(rng, 4)
        padded = np.concatenate([ids, np.zeros((1, 2, 4), dtype=ids.dtype)], axis=1)
        g, W = bound(params)
        a = content_select(g, W, encode_records(g, W, ids), np.ones((1, 4), bool))
        mask = np.array([[True] * 4 + [False] * 2])
        b = content_select(g, W, encode_records(g, W, padded), mask)
    np.testing.assert_allclose(a.selected.data[0], b.selected.data[0, :4], atol=1e-12)


# -- planner ---------------------------------------------------------------------


def test_planner_distribution_covers_records_and_eop():
    rng = np.random.default_rng(4)
    with nc.float64():
        params, ids = random_table_params(rng, 5)
        g, W = bound(params)
        enc = content_select(g, W, encode_records(g, W, ids), np.ones((1, 5), bool))
        probs, _ = plan_step(g, W, plan_init(g, enc), start_input(g, W, 1), enc)
    assert probs.shape == (1, 6)
    assert abs(probs.data.sum() - 1) < 1e-12


def test_plan_init_is_mean_of_selected():
    rng = np.random.default_rng(5)
    with nc.float64():
        params, ids = random_table_params(rng, 3)
        g, W = bound(params)
        enc = content_select(g, W, encode_records(g, W, ids), np.ones((1, 3), bool))
        state = plan_init(g, enc)
    np.testing.assert_allclose(state.hidden.data, enc.selected.data.mean(axis=1))
    np.testing.assert_array_equal(state.cell.data, 0.0)


def test_planner_mask_appends_eop():
    m = planner_mask(np.array([[True, False]]))
    assert m.tolist() == [[True, False, True]]


# -- generator ---------------------------------------------------------------------


def _decoder_output(params, mode):
    ex = tiny_example()
    batch = make_batch([ex], params.vocab, params.config)
    g, W = bound(params)
    enc = content_select(g, W, encode_records(g, W, batch.rec_ids), batch.rec_mask, params.config.use_gate)
    penc = encode_plan(g, W, enc, batch.plan, batch.plan_len)
    out = decode_step(g, W, decoder_start(g, penc), batch.words_in[:, 0], penc)
    return g, W, batch, penc, out


@pytest.mark.parametrize("mode", [JOINT, CONDITIONAL])
def test_copy_split_normalized(mode):
    with nc.float64():
        _, params = tiny_params(copy_mode=mode)
        g, W, batch, penc, out = _decoder_output(params, mode)
        gen, cop = copy_split(g, W, out, penc, mode)
    assert abs(gen.data.sum() + cop.data.sum() - 1) < 1e-12
    np.testing.assert_allclose(out.beta.data.sum(axis=-1), 1.0)


@pytest.mark.parametrize("mode", [JOINT, CONDITIONAL])
def test_gold_loglik_matches_probabilities(mode):
    with nc.float64():
        _, params = tiny_params(copy_mode=mode)
        g, W, batch, penc, out = _decoder_output(params, mode)
        gen, cop = copy_split(g, W, out, penc, mode)
        target = np.array([2])
        for flag, match in ((np.array([1.0]), np.array([[1.0, 0, 0, 1.0]])), (np.array([0.0]), np.zeros((1, 4)))):
            ll = gold_loglik(g, W, out, penc, mode, flag, match, target).data[0]
            p = (cop.data * match).sum() if flag[0] else gen.data[0, 2]
            assert ll == pytest.approx(np.log(p), rel=1e-10)


def test_encode_plan_rejects_bad_steps():
    _, params = tiny_params()
    ex = tiny_example()
    batch = make_batch([ex], params.vocab, params.config)
    g, W = bound(params)
    enc = content_select(g, W, encode_records(g, W, batch.rec_ids), batch.rec_mask)
    with pytest.raises(ValueError):
        encode_plan(g, W, enc, np.array([[5]]), np.array([1]))
    with pytest.raises(ValueError):
        encode_plan(g, W, enc, np.zeros((1, 0), dtype=int), np.array([0]))


# -- batches --------------------------------------------------------------------------


def test_batch_layout():
    ex = tiny_example()
    _, params = tiny_params()
    b = make_batch([ex], params.vocab, params.config)
    assert b.words_in[0, 0] == params.vocab.bos
    assert b.words_out[0, len(ex.summary.tokens)] == params.vocab.eos
    assert b.tok_mask.sum() == len(ex.summary.tokens) + 1
    # "10" is the value of plan steps 0 and 3
    assert b.copy_match[0, 2].tolist() == [1, 0, 0, 1]
    assert b.copy_flag[0].tolist() == [0, 0, 1, 0, 1, 0, 0]


def test_batch_without_planner_uses_identity_plan():
    ex = tiny_example()
    _, params = tiny_params(use_planner=False)
    b = make_batch([ex], params.vocab, params.config)
    assert b.plan[0].tolist() == [0, 1, 2]


def test_out_of_vocabulary_values_get_extended_ids():
    exs = generate_corpus(3, seed=0)
    vocab = build_vocabulary([(e.table, e.summary) for e in exs[:1]])
    b = make_batch(exs[1:2], vocab, ModelConfig(hidden=4))
    V = len(vocab.words)
    assert (b.step_ext >= V).any()
    assert len(b.ext_words[0]) == b.step_ext.max() - V + 1


# -- objective ------------------------------------------------------------------------------


@pytest.mark.parametrize("mode,gate,planner", [
    (CONDITIONAL, True, True), (JOINT, True, True), (CONDITIONAL, False, True), (CONDITIONAL, True, False),
])
def test_end_to_end_gradient(mode, gate, planner):
    ex, params = tiny_params(copy_mode=mode, use_gate=gate, use_planner=planner)
    batch = make_batch([ex], params.vocab, params.config)

    def build(g, W):
        return forward(g, params, batch, W=W).loss

    err, where = max_relative_error(build, params.arrays, samples=6)
    assert err < 1e-4, where
    err, where = max_directional_error(build, params.arrays)
    assert err < 1e-4, where


def test_truncation_changes_gradients_not_loss():
    with nc.float64():
        ex, params = tiny_params()
        batch = make_batch([ex], params.vocab, params.config)
        g1 = nc.Graph()
        f1 = forward(g1, params, batch)
        g2 = nc.Graph()
        f2 = forward(g2, params, batch, truncation=2)
        assert float(f1.loss.data) == float(f2.loss.data)
        a, b = g1.backward(f1.loss), g2.backward(f2.loss)
    assert not np.allclose(a["emb_word"], b["emb_word"])


def test_loss_is_plan_plus_text():
    with nc.float64():
        ex, params = tiny_params()
        batch = make_batch([ex], params.vocab, params.config)
        f = forward(nc.Graph(grad=False), params, batch)
    assert float(f.loss.data) == pytest.approx(float(f.plan_nll.data[0] + f.text_nll.data[0]))


def test_teacher_forced_accuracy_keys():
    ex, params = tiny_params()
    acc = teacher_forced_accuracy(params, [ex])
    assert set(acc) == {"token_accuracy", "plan_step_accuracy", "plan_exact_match"}
    assert 0 <= acc["token_accuracy"] <= 1


# -- checkpoints --------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    _, params = tiny_params(copy_mode=JOINT, use_gate=False)
    params.avg_plan_len = 4.0
    path = tmp_path / "m.npz"
    params.save(path)
    loaded = ModelParams.load(path)
    assert fingerprint(loaded) == fingerprint(params)
    assert loaded.avg_plan_len == 4.0
    assert loaded.vocab.words.itos == params.vocab.words.itos


def test_checkpoint_vocab_mismatch(tmp_path):
    _, params = tiny_params()
    path = tmp_path / "m.npz"
    params.save(path)
    other = build_vocabulary([(e.table, e.summary) for e in generate_corpus(2, seed=0)])
    with pytest.raises(ValueError, match="hash"):
        ModelParams.load(path, vocab=other)


def test_checkpoint_missing_param(tmp_path):
    _, params = tiny_params()
    del params.arrays["W_c"]
    path = tmp_path / "m.npz"
    params.save(path)
    with pytest.raises(ValueError, match="W_c"):
        ModelParams.load(path)


# -- hand-set weights ----------------------------------------------------------------------


def _zeroed(params, *names):
    for name in names:
        params.arrays[name][...] = 0.0
    return params


def _tiny_encoded(params, gate=True):
    ex = tiny_example()
    batch = make_batch([ex], params.vocab, params.config)
    g, W = bound(params)
    raw = encode_records(g, W, batch.rec_ids)
    return g, W, batch, raw, content_select(g, W, raw, batch.rec_mask, gate)


def test_default_architecture_sizes():
    c = ModelConfig()
    assert (c.hidden, c.planner_layers, c.decoder_layers) == (600, 1, 2)
    with pytest.raises(ValueError):
        ModelConfig(decoder_layers=1)


def test_zero_record_weights():
    _, params = tiny_params()
    _zeroed(params, "W_r", "b_r")
    _, _, _, raw, _ = _tiny_encoded(params)
    np.testing.assert_array_equal(raw.data, 0.0)
    params.arrays["b_r"][1] = -0.7
    params.arrays["b_r"][2] = 0.3
    _, _, _, raw, _ = _tiny_encoded(params)
    assert np.all(raw.data[..., 1] == 0.0) and np.allclose(raw.data[..., 2], 0.3)


def test_record_encoder_hand_arithmetic():
    with nc.float64():
        _, params = tiny_params(hidden=3)
        ex = tiny_example()
        batch = make_batch([ex], params.vocab, params.config)
        ids = batch.rec_ids[:, :2]
        g, W = bound(params)
        out = encode_records(g, W, ids).data[0]
    A = params.arrays
    for j in range(2):
        feats = np.concatenate([A["emb_type"][ids[0, j, 0]], A["emb_entity"][ids[0, j, 1]],
                                A["emb_value"][ids[0, j, 2]], A["emb_side"][ids[0, j, 3]]])
        expected = np.maximum(A["W_r"] @ feats + A["b_r"], 0.0)
        np.testing.assert_allclose(out[j], expected, rtol=1e-12)


def test_zero_attention_weights_uniform_alpha():
    with nc.float64():
        _, params = tiny_params()
        _zeroed(params, "W_a")
        *_, enc = _tiny_encoded(params)
    expected = (1 - np.eye(3)) / 2
    np.testing.assert_allclose(enc.alpha.data[0], expected)


def test_zero_gate_weights_halve_records():
    with nc.float64():
        _, params = tiny_params()
        _zeroed(params, "W_g")
        _, _, _, raw, enc = _tiny_encoded(params)
    np.testing.assert_array_equal(enc.gate.data, 0.5)
    np.testing.assert_allclose(enc.selected.data, raw.data / 2)


def test_plan_init_symmetric_cases():
    g = nc.Graph(grad=False)
    v = np.array([0.3, -1.0, 2.0])
    same = EncodedTable(None, None, g.const(np.stack([v, v, v])[None]), None, np.ones((1, 3), bool))
    np.testing.assert_allclose(plan_init(g, same).hidden.data[0], v, rtol=1e-6)
    opposite = EncodedTable(None, None, g.const(np.stack([v, -v])[None]), None, np.ones((1, 2), bool))
    np.testing.assert_array_equal(plan_init(g, opposite).hidden.data, 0.0)


def test_zero_pointer_weights_uniform_plan():
    _, params = tiny_params()
    _zeroed(params, "W_c", "plan_eop")
    g, W, _, _, enc = _tiny_encoded(params)
    probs, _ = plan_step(g, W, plan_init(g, enc), start_input(g, W, 1), enc)
    np.testing.assert_allclose(probs.data, 0.25, rtol=1e-6)


def test_encode_plan_length_one_and_order():
    with nc.float64():
        _, params = tiny_params()
        g, W, _, _, enc = _tiny_encoded(params)
        one = encode_plan(g, W, enc, np.array([[1]]), np.array([1]))
        ab = encode_plan(g, W, enc, np.array([[0, 2]]), np.array([2]))
        ba = encode_plan(g, W, enc, np.array([[2, 0]]), np.array([2]))
    assert one.vectors.shape == (1, 1, params.config.hidden)
    assert not np.allclose(ab.vectors.data[0, ::-1], ba.vectors.data[0])


def test_zero_attention_and_output_weights():
    with nc.float64():
        _, params = tiny_params()
        _zeroed(params, "W_b", "W_y", "b_y", "w_u", "b_u")
        g, W, batch, penc, out = _decoder_output(params, CONDITIONAL)
        gen, cop = copy_split(g, W, out, penc, CONDITIONAL)
    np.testing.assert_allclose(out.beta.data, 0.25)
    V = len(params.vocab.words)
    # switch at 0.5: half the mass is a uniform p_gen, half is uniform beta
    np.testing.assert_allclose(gen.data, 0.5 / V)
    np.testing.assert_allclose(cop.data, 0.5 * 0.25)


def test_joint_generation_part_is_renormalized_p_gen():
    with nc.float64():
        _, params = tiny_params(copy_mode=JOINT)
        g, W, batch, penc, out = _decoder_output(params, JOINT)
        gen, _ = copy_split(g, W, out, penc, JOINT)
        p_gen = g.softmax(out.logits).data
    np.testing.assert_allclose(gen.data / gen.data.sum(), p_gen, rtol=1e-10)


@pytest.mark.parametrize("mode", [JOINT, CONDITIONAL])
def test_copy_mass_sums_over_equal_valued_steps(mode):
    # plan (0, 1, 2, 0): steps 0 and 3 both carry the value "10"
    with nc.float64():
        _, params = tiny_params(copy_mode=mode)
        g, W, batch, penc, out = _decoder_output(params, mode)
        gen, cop = copy_split(g, W, out, penc, mode)
    V = len(params.vocab.words)
    step_ext = np.array([[params.vocab.words.id(v) for v in ("10", "5", "7", "10")]])
    marg = marginal_ext(gen.data, cop.data, step_ext, V)
    ten = params.vocab.words.id("10")
    assert marg[0, ten] == pytest.approx(gen.data[0, ten] + cop.data[0, 0] + cop.data[0, 3], rel=1e-12)
    assert marg.sum() == pytest.approx(1.0, abs=1e-12)


def test_switch_at_zero_is_half():
    with nc.float64():
        _, params = tiny_params()
        _zeroed(params, "w_u", "b_u")
        g, W, batch, penc, out = _decoder_output(params, CONDITIONAL)
        _, cop = copy_split(g, W, out, penc, CONDITIONAL)
    assert cop.data.sum() == pytest.approx(0.5)
