"""Content selection, pointer-network planning and plan-conditioned generation.

All forward code is written against :class:`~planwrite.numcore.Graph` so the
same functions serve training (tape on) and decoding (tape off). Arrays carry
a leading batch axis; record tables and plans are padded per batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .corpus import DatasetExample, mark_copy_targets
from .datamodel import ContentPlan, Vocabulary, featurize_record

JOINT = "joint"
CONDITIONAL = "conditional"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 600
    copy_mode: str = CONDITIONAL
    use_gate: bool = True
    use_planner: bool = True
    planner_layers: int = 1
    decoder_layers: int = 2

    def __post_init__(self):
        if self.copy_mode not in (JOINT, CONDITIONAL):
            raise ValueError(f"copy_mode must be 'joint' or 'conditional', got {self.copy_mode!r}")
        if self.planner_layers != 1 or self.decoder_layers != 2:
            raise ValueError("the architecture uses a 1-layer planner and a 2-layer decoder")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")


def param_shapes(config: ModelConfig, sizes: dict[str, int]) -> dict[str, tuple[int, ...]]:
    n = config.hidden
    v = sizes["words"]
    return {
        "emb_type": (sizes["rtype"], n),
        "emb_entity": (sizes["entity"], n),
        "emb_value": (sizes["value"], n),
        "emb_side": (sizes["side"], n),
        "W_r": (n, 4 * n), "b_r": (n,),
        "W_a": (n, n), "W_g": (n, 2 * n),
        "plan_start": (n,), "plan_eop": (n,),
        "planner.W": (4 * n, 2 * n), "planner.b": (4 * n,),
        "W_c": (n, n),
        "enc_fwd.W": (4 * n, 2 * n), "enc_fwd.b": (4 * n,),
        "enc_bwd.W": (4 * n, 2 * n), "enc_bwd.b": (4 * n,),
        "W_e": (n, 2 * n),
        "init_h0": (n, 2 * n), "init_c0": (n, 2 * n),
        "init_h1": (n, 2 * n), "init_c1": (n, 2 * n),
        "emb_word": (v, n),
        "dec0.W": (4 * n, 3 * n), "dec0.b": (4 * n,),
        "dec1.W": (4 * n, 2 * n), "dec1.b": (4 * n,),
        "W_b": (n, n), "W_d": (n, 2 * n),
        "W_y": (v, n), "b_y": (v,),
        "w_u": (n,), "b_u": (),
    }


@dataclass
class ModelParams:
    config: ModelConfig
    vocab: Vocabulary
    arrays: dict[str, np.ndarray]
    # corpus statistics used for decoding limits
    avg_plan_len: float = 0.0
    avg_summary_len: float = 0.0

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0,
                   scale: float = 0.1) -> "ModelParams":
        rng = np.random.default_rng(seed)
        shapes = param_shapes(config, vocab_sizes(vocab))
        arrays = {name: nc.init_uniform(rng, shape, scale) for name, shape in sorted(shapes.items())}
        return cls(config, vocab, arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.vocab, {k: v.copy() for k, v in self.arrays.items()},
                           self.avg_plan_len, self.avg_summary_len)

    def bind(self, g: nc.Graph) -> dict[str, nc.Tensor]:
        return {name: g.param(name, value) for name, value in self.arrays.items()}

    # -- checkpoints ------------------------------------------------------------

    def header(self) -> dict:
        c = self.config
        return {
            "format_version": CHECKPOINT_VERSION,
            "hidden": c.hidden,
            "vocab_sizes": vocab_sizes(self.vocab),
            "vocab_hash": self.vocab.digest(),
            "flags": {"copy_mode": c.copy_mode, "use_gate": c.use_gate, "use_planner": c.use_planner},
            "avg_plan_len": self.avg_plan_len,
            "avg_summary_len": self.avg_summary_len,
        }

    def save(self, path: str | Path) -> None:
        header = self.header()
        header["vocab"] = self.vocab.to_dict()
        with open(path, "wb") as f:
            np.savez(f, __header__=np.array(json.dumps(header, sort_keys=True)),
                     **{f"p:{k}": v for k, v in sorted(self.arrays.items())})

    @classmethod
    def load(cls, path: str | Path, vocab: Vocabulary | None = None) -> "ModelParams":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            arrays = {k[2:]: z[k].copy() for k in z.files if k.startswith("p:")}
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        stored = Vocabulary.from_dict(header["vocab"])
        if stored.digest() != header["vocab_hash"]:
            raise ValueError("checkpoint vocabulary does not match its recorded hash")
        if vocab is not None and vocab.digest() != header["vocab_hash"]:
            raise ValueError("vocabulary hash mismatch between checkpoint and supplied vocabulary")
        flags = header["flags"]
        config = ModelConfig(hidden=header["hidden"], copy_mode=flags["copy_mode"],
                             use_gate=flags["use_gate"], use_planner=flags["use_planner"])
        expected = param_shapes(config, header["vocab_sizes"])
        for name, shape in expected.items():
            if name not in arrays or arrays[name].shape != tuple(shape):
                raise ValueError(f"checkpoint parameter {name} missing or misshapen")
        return cls(config, vocab or stored, arrays, header["avg_plan_len"], header["avg_summary_len"])


def vocab_sizes(vocab: Vocabulary) -> dict[str, int]:
    return {"rtype": len(vocab.rtype), "entity": len(vocab.entity), "value": len(vocab.value),
            "side": len(vocab.side), "words": len(vocab.words)}


# -- batches --------------------------------------------------------------------


@dataclass
class Batch:
    rec_ids: np.ndarray      # [B, R, 4]
    rec_mask: np.ndarray     # [B, R] bool
    plan: np.ndarray         # [B, Z]
    plan_len: np.ndarray     # [B]
    words_in: np.ndarray     # [B, T] previous word ids (BOS first)
    words_out: np.ndarray    # [B, T] target ids in V_y (UNK when out of vocabulary)
    ext_out: np.ndarray      # [B, T] target ids in V_y + per-example copy extension
    copy_flag: np.ndarray    # [B, T] 1 where the gold token is labeled as copied
    copy_match: np.ndarray   # [B, T, Z] 1 where plan step k's value equals the target
    tok_mask: np.ndarray     # [B, T]
    step_ext: np.ndarray     # [B, Z] extended id of each plan step's value
    ext_words: list[list[str]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.rec_ids.shape[0]

    @property
    def plan_mask(self) -> np.ndarray:
        return np.arange(self.plan.shape[1])[None, :] < self.plan_len[:, None]


def identity_plan(example: DatasetExample) -> ContentPlan:
    return ContentPlan(tuple(range(len(example.table))))


def make_batch(examples: list[DatasetExample], vocab: Vocabulary, config: ModelConfig,
               plans: list[ContentPlan] | None = None) -> Batch:
    """Pad and index a list of examples.

    Without a planner the text stage reads the whole table in order, so the
    copy labels are re-derived against that identity plan.
    """
    B = len(examples)
    if plans is None:
        plans = [ex.plan if config.use_planner else identity_plan(ex) for ex in examples]
    summaries = []
    for ex, plan in zip(examples, plans):
        s = ex.summary
        if plan is not ex.plan or s.copy_labels is None:
            s = mark_copy_targets(s, plan, ex.table)
        summaries.append(s)
    R = max(len(ex.table) for ex in examples)
    Z = max(max(len(p) for p in plans), 1)
    T = max(len(s.tokens) for s in summaries) + 1
    V = len(vocab.words)
    rec_ids = np.zeros((B, R, 4), dtype=np.int64)
    rec_mask = np.zeros((B, R), dtype=bool)
    plan = np.zeros((B, Z), dtype=np.int64)
    plan_len = np.array([len(p) for p in plans], dtype=np.int64)
    words_in = np.full((B, T), vocab.words.id("<pad>"), dtype=np.int64)
    words_out = np.zeros((B, T), dtype=np.int64)
    ext_out = np.zeros((B, T), dtype=np.int64)
    copy_flag = np.zeros((B, T))
    copy_match = np.zeros((B, T, Z))
    tok_mask = np.zeros((B, T))
    step_ext = np.zeros((B, Z), dtype=np.int64)
    ext_words = []
    for b, (ex, p, s) in enumerate(zip(examples, plans, summaries)):
        for j, rec in enumerate(ex.table):
            rec_ids[b, j] = featurize_record(rec, vocab)
        rec_mask[b, :len(ex.table)] = True
        plan[b, :len(p)] = p.steps
        values = [ex.table[k].value for k in p.steps]
        extra = [w for w in dict.fromkeys(values) if w not in vocab.words]
        ext_words.append(extra)
        ext_id = {w: V + i for i, w in enumerate(extra)}
        for k, w in enumerate(values):
            step_ext[b, k] = vocab.words.id(w) if w in vocab.words else ext_id[w]
        toks = list(s.tokens)
        words_in[b, 0] = vocab.bos
        for t, w in enumerate(toks):
            words_in[b, t + 1] = vocab.words.id(w)
            words_out[b, t] = vocab.words.id(w)
            ext_out[b, t] = vocab.words.id(w) if w in vocab.words else ext_id.get(w, vocab.unk)
            if s.copy_labels[t] is not None:
                copy_flag[b, t] = 1.0
                for k, val in enumerate(values):
                    if val == w:
                        copy_match[b, t, k] = 1.0
        words_out[b, len(toks)] = vocab.eos
        ext_out[b, len(toks)] = vocab.eos
        tok_mask[b, :len(toks) + 1] = 1.0
    return Batch(rec_ids, rec_mask, plan, plan_len, words_in, words_out, ext_out,
                 copy_flag, copy_match, tok_mask, step_ext, ext_words)


# -- stage 1: records, gate, planner ------------------------------------------------


@dataclass
class EncodedTable:
    raw: nc.Tensor     # r_j        [B, R, n]
    gate: nc.Tensor    # g_j        [B, R, n] (ones when the gate is disabled)
    selected: nc.Tensor  # r_j^cs   [B, R, n]
    alpha: nc.Tensor | None  # [B, R, R]
    mask: np.ndarray   # [B, R]


class Dropout:
    """Draws keep-masks from a seeded generator; inactive when ``rate`` is 0."""

    def __init__(self, rate: float = 0.0, rng: np.random.Generator | None = None):
        self.rate = rate
        self.rng = rng

    def __call__(self, g: nc.Graph, x: nc.Tensor) -> nc.Tensor:
        if self.rate <= 0 or self.rng is None:
            return x
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return g.dropout(x, keep.astype(x.data.dtype))


NO_DROPOUT = Dropout()


def encode_records(g: nc.Graph, W: dict, rec_ids: np.ndarray) -> nc.Tensor:
    feats = g.concat([
        g.embedding(W["emb_type"], rec_ids[..., 0]),
        g.embedding(W["emb_entity"], rec_ids[..., 1]),
        g.embedding(W["emb_value"], rec_ids[..., 2]),
        g.embedding(W["emb_side"], rec_ids[..., 3]),
    ])
    return g.relu(g.add(g.matmul(feats, W["W_r"], trans_b=True), W["b_r"]))


def content_select(g: nc.Graph, W: dict, raw: nc.Tensor, rec_mask: np.ndarray,
                   use_gate: bool = True) -> EncodedTable:
    rec_mask = np.asarray(rec_mask, dtype=bool)
    if not use_gate:
        return EncodedTable(raw, g.const(np.ones(raw.shape)), raw, None, rec_mask)
    if (rec_mask.sum(axis=1) < 2).any():
        raise ValueError("attention needs a context")
    R = raw.shape[1]
    others = rec_mask[:, None, :] & ~np.eye(R, dtype=bool)[None]
    # padded rows only need some support; they are never read
    others = np.where(rec_mask[:, :, None], others, rec_mask[:, None, :])
    scores = g.matmul(g.matmul(raw, W["W_a"]), raw, trans_b=True)
    alpha = g.softmax(scores, others)
    context = g.matmul(alpha, raw)
    gate = g.sigmoid(g.matmul(g.concat([raw, context]), W["W_g"], trans_b=True))
    return EncodedTable(raw, gate, g.mul(gate, raw), alpha, rec_mask)


def plan_init(g: nc.Graph, enc: EncodedTable) -> nc.LstmState:
    mask = enc.mask.astype(nc.get_dtype())
    counts = mask.sum(axis=1, keepdims=True)
    if (counts < 1).any():
        raise ValueError("plan_init needs at least one record")
    total = g.sum(g.mul(enc.selected, g.const(mask[:, :, None])), axis=1)
    hidden = g.mul(total, g.const(1.0 / counts))
    return nc.LstmState(hidden, g.const(np.zeros(hidden.shape)))


def planner_mask(rec_mask: np.ndarray) -> np.ndarray:
    """Records plus the end-of-plan slot (last column)."""
    return np.concatenate([rec_mask, np.ones((rec_mask.shape[0], 1), dtype=bool)], axis=1)


def plan_scores(g: nc.Graph, W: dict, state: nc.LstmState, prev: nc.Tensor, enc: EncodedTable,
                drop: Dropout = NO_DROPOUT) -> tuple[nc.Tensor, nc.LstmState]:
    """Unnormalized pointer scores h^T W_c r_j^cs for every record, EOP last."""
    new = nc.lstm_step(g, drop(g, prev), state, W["planner.W"], W["planner.b"])
    query = g.matmul(new.hidden, W["W_c"])
    B, n = query.shape
    rec_scores = g.reshape(g.matmul(enc.selected, g.reshape(query, (B, n, 1))), (B, -1))
    eop_score = g.matmul(query, g.reshape(W["plan_eop"], (n, 1)))
    return g.concat([rec_scores, eop_score]), new


def plan_step(g: nc.Graph, W: dict, state: nc.LstmState, prev: nc.Tensor, enc: EncodedTable,
              mask: np.ndarray | None = None, drop: Dropout = NO_DROPOUT):
    """One pointer step. Returns (probabilities over R records + EOP, new state)."""
    scores, new = plan_scores(g, W, state, prev, enc, drop)
    if mask is None:
        mask = planner_mask(enc.mask)
    return g.softmax(scores, mask), new


def start_input(g: nc.Graph, W: dict, batch_size: int) -> nc.Tensor:
    return g.add(g.const(np.zeros((batch_size, W["plan_start"].shape[0]))), W["plan_start"])


def plan_nll(g: nc.Graph, W: dict, enc: EncodedTable, batch: Batch,
             drop: Dropout = NO_DROPOUT) -> nc.Tensor:
    """Teacher-forced -log p(z|r) per example, end-of-plan event included."""
    B, R = enc.mask.shape
    mask = planner_mask(enc.mask)
    state = plan_init(g, enc)
    prev = start_input(g, W, B)
    total = None
    for k in range(batch.plan.shape[1] + 1):
        live = k <= batch.plan_len
        if not live.any():
            break
        gold = np.where(k < batch.plan_len, batch.plan[:, min(k, batch.plan.shape[1] - 1)], R)
        scores, state = plan_scores(g, W, state, prev, enc, drop)
        logp = g.sub(g.gather(scores, gold), g.logsumexp(scores, mask))
        term = g.mul(logp, g.const(live.astype(float)))
        total = term if total is None else g.add(total, term)
        if k < batch.plan.shape[1]:
            prev = g.gather(enc.selected, batch.plan[:, k])
    return g.scale(total, -1.0)


# -- stage 2: plan encoder and text decoder -------------------------------------


@dataclass
class PlanEncoding:
    vectors: nc.Tensor          # e_k [B, Z, n]
    mask: np.ndarray            # [B, Z]
    init: list[nc.LstmState]    # decoder start, one per layer


def encode_plan(g: nc.Graph, W: dict, enc: EncodedTable, plan: np.ndarray,
                plan_len: np.ndarray) -> PlanEncoding:
    plan = np.asarray(plan)
    plan_len = np.asarray(plan_len)
    if plan.shape[1] == 0 or (plan_len < 1).any():
        raise ValueError("encode_plan needs a non-empty plan")
    if (plan >= enc.selected.shape[1]).any() or (plan < 0).any():
        raise ValueError("plan step outside the record table")
    outputs, f_last, b_last = nc.bilstm_encode(
        g, enc.selected, plan_len, (W["enc_fwd.W"], W["enc_fwd.b"]),
        (W["enc_bwd.W"], W["enc_bwd.b"]), index=plan)
    vectors = g.matmul(outputs, W["W_e"], trans_b=True)
    h_cat = g.concat([f_last.hidden, b_last.hidden])
    c_cat = g.concat([f_last.cell, b_last.cell])
    init = [
        nc.LstmState(g.matmul(h_cat, W[f"init_h{layer}"], trans_b=True),
                     g.matmul(c_cat, W[f"init_c{layer}"], trans_b=True))
        for layer in range(2)
    ]
    mask = np.arange(plan.shape[1])[None, :] < plan_len[:, None]
    return PlanEncoding(vectors, mask, init)


@dataclass
class DecoderStep:
    states: list[nc.LstmState]
    attentional: nc.Tensor  # d^att of the previous step (input feeding)


@dataclass
class StepOutput:
    hidden: nc.Tensor       # d_t
    attn_scores: nc.Tensor  # d_t^T W_b e_k
    beta: nc.Tensor
    attentional: nc.Tensor  # d_t^att
    logits: nc.Tensor       # W_y d^att + b_y
    step: DecoderStep


def decoder_start(g: nc.Graph, enc: PlanEncoding) -> DecoderStep:
    B, _, n = enc.vectors.shape
    return DecoderStep(list(enc.init), g.const(np.zeros((B, n))))


def decode_step(g: nc.Graph, W: dict, step: DecoderStep, prev_words: np.ndarray, enc: PlanEncoding,
                drop: Dropout = NO_DROPOUT) -> StepOutput:
    emb = drop(g, g.embedding(W["emb_word"], prev_words))
    x = g.concat([emb, step.attentional])
    s0 = nc.lstm_step(g, x, step.states[0], W["dec0.W"], W["dec0.b"])
    s1 = nc.lstm_step(g, drop(g, s0.hidden), step.states[1], W["dec1.W"], W["dec1.b"])
    d = s1.hidden
    B, n = d.shape
    query = g.reshape(g.matmul(d, W["W_b"]), (B, n, 1))
    vecs = enc.vectors
    scores = g.reshape(g.matmul(vecs, query), (B, -1))
    beta = g.softmax(scores, enc.mask)
    context = g.reshape(g.matmul(g.reshape(beta, (B, 1, -1)), vecs), (B, n))
    d_att = g.tanh(g.matmul(g.concat([d, context]), W["W_d"], trans_b=True))
    logits = g.add(g.matmul(drop(g, d_att), W["W_y"], trans_b=True), W["b_y"])
    return StepOutput(d, scores, beta, d_att, logits, DecoderStep([s0, s1], d_att))


def copy_split(g: nc.Graph, W: dict, out: StepOutput, enc: PlanEncoding, mode: str):
    """Joint probabilities (p(y, u=0) over V_y, p(u=1, step k) over plan steps).

    Summing the copy column over steps sharing a value gives p(y, u=1).
    """
    if mode == JOINT:
        V = out.logits.shape[-1]
        full_mask = np.concatenate([np.ones((enc.mask.shape[0], V), dtype=bool), enc.mask], axis=1)
        union = g.softmax(g.concat([out.logits, out.attn_scores]), full_mask)
        return g.slice(union, 0, V), g.slice(union, V, union.shape[-1])
    p_gen = g.softmax(out.logits)
    switch = g.sigmoid(g.add(g.sum(g.mul(out.hidden, W["w_u"]), axis=-1), W["b_u"]))
    switch = g.reshape(switch, (-1, 1))
    keep = g.sub(g.const(np.ones(switch.shape)), switch)
    return g.mul(keep, p_gen), g.mul(switch, out.beta)


def gold_loglik(g: nc.Graph, W: dict, out: StepOutput, enc: PlanEncoding, mode: str,
                flag: np.ndarray, match: np.ndarray, gold: np.ndarray) -> nc.Tensor:
    """log p(y_t, u_t) for the gold token and gold copy switch, computed in log space.

    ``flag`` marks copied tokens; ``match`` marks the plan steps whose value is
    the gold token (only read where ``flag`` is set).
    """
    match = np.asarray(match, dtype=bool)
    copy_mask = np.where(match.any(axis=-1, keepdims=True), match, enc.mask)
    if mode == JOINT:
        V = out.logits.shape[-1]
        union = g.concat([out.logits, out.attn_scores])
        full_mask = np.concatenate([np.ones((enc.mask.shape[0], V), dtype=bool), enc.mask], axis=1)
        norm = g.logsumexp(union, full_mask)
        copy_term = g.logsumexp(out.attn_scores, copy_mask)
        gen_term = g.gather(out.logits, gold)
    else:
        a = g.add(g.sum(g.mul(out.hidden, W["w_u"]), axis=-1), W["b_u"])
        copy_term = g.add(g.log_sigmoid(a), g.sub(g.logsumexp(out.attn_scores, copy_mask),
                                                   g.logsumexp(out.attn_scores, enc.mask)))
        gen_term = g.add(g.log_sigmoid(g.scale(a, -1.0)),
                         g.sub(g.gather(out.logits, gold), g.logsumexp(out.logits)))
        norm = None
    mixed = g.add(g.mul(copy_term, g.const(flag)), g.mul(gen_term, g.const(1.0 - flag)))
    return mixed if norm is None else g.sub(mixed, norm)


def text_nll(g: nc.Graph, W: dict, enc: PlanEncoding, batch: Batch, mode: str,
             truncation: int | None = None, drop: Dropout = NO_DROPOUT) -> nc.Tensor:
    """Teacher-forced -log p(y|r,z) per example using the gold copy switch.

    Recurrent state is detached every ``truncation`` tokens, so gradients stop
    at segment boundaries while the forward pass is unchanged.
    """
    step = decoder_start(g, enc)
    total = None
    T = batch.words_in.shape[1]
    for t in range(T):
        if truncation and t and t % truncation == 0:
            step = DecoderStep(
                [nc.LstmState(g.detach(s.hidden), g.detach(s.cell)) for s in step.states],
                g.detach(step.attentional))
        out = decode_step(g, W, step, batch.words_in[:, t], enc, drop)
        ll = gold_loglik(g, W, out, enc, mode, batch.copy_flag[:, t], batch.copy_match[:, t],
                         batch.words_out[:, t])
        term = g.mul(ll, g.const(batch.tok_mask[:, t]))
        total = term if total is None else g.add(total, term)
        step = out.step
    return g.scale(total, -1.0)


def marginal_ext(gen: np.ndarray, cop: np.ndarray, step_ext: np.ndarray, ext_size: int) -> np.ndarray:
    """p(y) over the extended vocabulary: generation mass plus copy mass per value."""
    B, V = gen.shape
    out = np.zeros((B, ext_size), dtype=gen.dtype)
    out[:, :V] = gen
    rows = np.repeat(np.arange(B), cop.shape[1])
    np.add.at(out, (rows, step_ext.reshape(-1)), cop.reshape(-1))
    return out


# -- whole-example objective --------------------------------------------------------


@dataclass
class Forward:
    loss: nc.Tensor             # scalar: mean over the batch
    plan_nll: nc.Tensor | None  # [B]
    text_nll: nc.Tensor         # [B]
    encoded: EncodedTable


def forward(g: nc.Graph, params: ModelParams, batch: Batch, truncation: int | None = None,
            drop: Dropout = NO_DROPOUT, W: dict | None = None) -> Forward:
    cfg = params.config
    W = W if W is not None else params.bind(g)
    raw = encode_records(g, W, batch.rec_ids)
    enc = content_select(g, W, raw, batch.rec_mask, cfg.use_gate)
    pnll = plan_nll(g, W, enc, batch, drop) if cfg.use_planner else None
    penc = encode_plan(g, W, enc, batch.plan, batch.plan_len)
    tnll = text_nll(g, W, penc, batch, cfg.copy_mode, truncation, drop)
    per_example = tnll if pnll is None else g.add(pnll, tnll)
    loss = g.scale(g.sum(per_example), 1.0 / batch.size)
    return Forward(loss, pnll, tnll, enc)


def teacher_forced_accuracy(params: ModelParams, examples: list[DatasetExample],
                            batch_size: int = 16) -> dict[str, float]:
    """Argmax agreement with gold plan steps (EOP included) and gold tokens (EOS included)."""
    cfg = params.config
    plan_hit = plan_tot = tok_hit = tok_tot = plan_exact = 0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batch = make_batch(chunk, params.vocab, cfg)
        g = nc.Graph(grad=False)
        W = params.bind(g)
        enc = content_select(g, W, encode_records(g, W, batch.rec_ids), batch.rec_mask, cfg.use_gate)
        B, R = batch.rec_mask.shape
        if cfg.use_planner:
            state = plan_init(g, enc)
            prev = start_input(g, W, B)
            right = np.ones(B, dtype=bool)
            for k in range(batch.plan.shape[1] + 1):
                live = k <= batch.plan_len
                if not live.any():
                    break
                gold = np.where(k < batch.plan_len, batch.plan[:, min(k, batch.plan.shape[1] - 1)], R)
                probs, state = plan_step(g, W, state, prev, enc)
                hit = probs.data.argmax(axis=-1) == gold
                plan_hit += int((hit & live).sum())
                plan_tot += int(live.sum())
                right &= hit | ~live
                if k < batch.plan.shape[1]:
                    prev = g.gather(enc.selected, batch.plan[:, k])
            plan_exact += int(right.sum())
        penc = encode_plan(g, W, enc, batch.plan, batch.plan_len)
        step = decoder_start(g, penc)
        ext_size = len(params.vocab.words) + max((len(e) for e in batch.ext_words), default=0)
        for t in range(batch.words_in.shape[1]):
            out = decode_step(g, W, step, batch.words_in[:, t], penc)
            gen, cop = copy_split(g, W, out, penc, cfg.copy_mode)
            marg = marginal_ext(gen.data, cop.data * penc.mask, batch.step_ext, ext_size)
            live = batch.tok_mask[:, t] > 0
            tok_hit += int(((marg.argmax(axis=-1) == batch.ext_out[:, t]) & live).sum())
            tok_tot += int(live.sum())
            step = out.step
    result = {"token_accuracy": tok_hit / max(tok_tot, 1)}
    if cfg.use_planner:
        result["plan_step_accuracy"] = plan_hit / max(plan_tot, 1)
        result["plan_exact_match"] = plan_exact / max(len(examples), 1)
    return result


def fingerprint(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name in sorted(params.arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params.arrays[name]).tobytes())
    h.update(json.dumps(asdict(params.config), sort_keys=True).encode())
    return h.hexdigest()
