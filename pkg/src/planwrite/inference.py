"""Two-stage beam search: plan first, then text conditioned on the plan."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import numcore as nc
from .datamodel import BOS, PAD, ContentPlan, RecordTable, featurize_record
from .model import (
    EncodedTable,
    ModelParams,
    PlanEncoding,
    DecoderStep,
    content_select,
    copy_split,
    decode_step,
    encode_plan,
    encode_records,
    marginal_ext,
    plan_init,
    plan_step,
    planner_mask,
)

StepFn = Callable[[list, list], tuple[np.ndarray, list]]


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    state: Any


def beam_search(step_fn: StepFn, start_state: Any, width: int, max_len: int,
                end_symbol: int, length_norm: bool = False) -> Hypothesis:
    """Standard beam search over cumulative log-probability.

    ``step_fn(states, last_tokens)`` scores every live hypothesis at once and
    returns ``(log_probs [H, S], new_states)``; ``last_tokens[i]`` is None on
    the first step. Ties go to the hypothesis that ends, then the lower token
    id. Returns the best finished hypothesis, or the best live one at
    ``max_len``. With ``length_norm`` finished hypotheses are ranked by
    score per token and the search runs to ``max_len``.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [Hypothesis((), 0.0, start_state)]
    done: list[Hypothesis] = []
    for _ in range(max_len):
        logp, states = step_fn([h.state for h in live], [h.tokens[-1] if h.tokens else None for h in live])
        logp = np.asarray(logp, dtype=np.float64)
        cands = []
        ids = np.arange(logp.shape[1])
        not_end = (ids != end_symbol).astype(np.int64)
        for i, h in enumerate(live):
            total = h.score + logp[i]
            order = np.lexsort((ids, not_end, -total))[:width]
            for tok in order:
                if np.isfinite(total[tok]):
                    cands.append((-total[tok], int(not_end[tok]), int(tok), i))
        cands.sort()
        live_next = []
        for neg, _, tok, i in cands[:width]:
            hyp = Hypothesis(live[i].tokens + (tok,), -neg, states[i])
            (done if tok == end_symbol else live_next).append(hyp)
        live = live_next
        if not live:
            break
        # log-probabilities only decrease, so no live hypothesis can overtake
        if not length_norm and done and max(d.score for d in done) >= live[0].score:
            break
    if done:
        if length_norm:
            return min(done, key=lambda h: (-h.score / len(h.tokens), len(h.tokens)))
        return min(done, key=lambda h: (-h.score, len(h.tokens)))
    return live[0]


def greedy_search(step_fn: StepFn, start_state: Any, max_len: int, end_symbol: int) -> Hypothesis:
    """Reference greedy decoder (argmax, lowest id on ties)."""
    hyp = Hypothesis((), 0.0, start_state)
    for _ in range(max_len):
        logp, states = step_fn([hyp.state], [hyp.tokens[-1] if hyp.tokens else None])
        row = np.asarray(logp[0], dtype=np.float64)
        tok = int(np.argmax(row))
        hyp = Hypothesis(hyp.tokens + (tok,), hyp.score + float(row[tok]), states[0])
        if tok == end_symbol:
            break
    return hyp


# -- model-specific steps --------------------------------------------------------


@dataclass
class TableContext:
    graph: nc.Graph
    weights: dict
    encoded: EncodedTable


def encode_table(params: ModelParams, table: RecordTable) -> TableContext:
    if len(table) == 0:
        raise ValueError("cannot generate from an empty table")
    g = nc.Graph(grad=False)
    W = params.bind(g)
    ids = np.array([[featurize_record(r, params.vocab) for r in table]], dtype=np.int64)
    mask = np.ones((1, len(table)), dtype=bool)
    enc = content_select(g, W, encode_records(g, W, ids), mask, params.config.use_gate)
    return TableContext(g, W, enc)


def planner_step_fn(ctx: TableContext, max_plan_len: int) -> tuple[StepFn, Any]:
    g, W, enc = ctx.graph, ctx.weights, ctx.encoded
    R = enc.selected.shape[1]
    start = plan_init(g, enc)
    start_vec = W["plan_start"].data
    selected = enc.selected.data[0]
    mask = planner_mask(enc.mask)

    def step(states, last):
        hidden = np.stack([s[0] for s in states])
        cell = np.stack([s[1] for s in states])
        depth = states[0][2]
        prev = np.stack([start_vec if tok is None else selected[tok] for tok in last])
        probs, new = plan_step(g, W, nc.LstmState(g.const(hidden), g.const(cell)), g.const(prev), enc, mask)
        with np.errstate(divide="ignore"):
            logp = np.log(probs.data.astype(np.float64))
        if depth == 0:
            logp[:, R] = -np.inf
        if depth >= max_plan_len:
            logp[:, :R] = -np.inf
        return logp, [(new.hidden.data[i], new.cell.data[i], depth + 1) for i in range(len(states))]

    return step, (start.hidden.data[0], start.cell.data[0], 0)


@dataclass
class TextContext:
    plan: ContentPlan
    encoding: PlanEncoding
    step_ext: np.ndarray
    ext_words: list[str]


def text_context(params: ModelParams, ctx: TableContext, table: RecordTable, plan: ContentPlan) -> TextContext:
    plan.validate(table)
    if len(plan) == 0:
        raise ValueError("cannot realize an empty plan")
    g, W = ctx.graph, ctx.weights
    penc = encode_plan(g, W, ctx.encoded, np.array([plan.steps]), np.array([len(plan)]))
    words = params.vocab.words
    values = [table[s].value for s in plan.steps]
    extra = [w for w in dict.fromkeys(values) if w not in words]
    ext = {w: len(words) + i for i, w in enumerate(extra)}
    step_ext = np.array([[words.id(w) if w in words else ext[w] for w in values]])
    return TextContext(plan, penc, step_ext, extra)


def _text_distribution(params, ctx: TableContext, tctx: TextContext, states, last):
    """Returns (gen part [H, V], copy part [H, Z], marginal [H, V_ext], new states)."""
    g, W = ctx.graph, ctx.weights
    V = len(params.vocab.words)
    prev = np.array([params.vocab.bos if t is None else (t if t < V else params.vocab.unk) for t in last])
    step = DecoderStep(
        [nc.LstmState(g.const(np.stack([s[0][l] for s in states])), g.const(np.stack([s[1][l] for s in states])))
         for l in range(2)],
        g.const(np.stack([s[2] for s in states])),
    )
    out = decode_step(g, W, step, prev, tctx.encoding)
    gen, cop = copy_split(g, W, out, tctx.encoding, params.config.copy_mode)
    H = len(states)
    step_ext = np.broadcast_to(tctx.step_ext, (H, tctx.step_ext.shape[1]))
    marg = marginal_ext(gen.data, cop.data, step_ext, V + len(tctx.ext_words))
    s0, s1 = out.step.states
    new_states = [
        ((s0.hidden.data[i], s1.hidden.data[i]), (s0.cell.data[i], s1.cell.data[i]), out.attentional.data[i])
        for i in range(H)
    ]
    return gen.data, cop.data, marg, new_states


def text_step_fn(params: ModelParams, ctx: TableContext, tctx: TextContext) -> tuple[StepFn, Any]:
    init = tctx.encoding.init
    n = params.config.hidden
    start = ((init[0].hidden.data[0], init[1].hidden.data[0]),
             (init[0].cell.data[0], init[1].cell.data[0]), np.zeros(n))
    banned = [params.vocab.words.id(PAD), params.vocab.words.id(BOS)]

    def step(states, last):
        _, _, marg, new_states = _text_distribution(params, ctx, tctx, states, last)
        with np.errstate(divide="ignore"):
            logp = np.log(marg.astype(np.float64))
        logp[:, banned] = -np.inf
        # an empty summary is never a valid realization of a non-empty plan
        first = np.array([t is None for t in last])
        logp[first, params.vocab.eos] = -np.inf
        return logp, new_states

    return step, start


def score_text(params: ModelParams, ctx: TableContext, tctx: TextContext,
               ext_tokens: Sequence[int]) -> tuple[float, list[bool]]:
    """Log-probability of a token sequence and, per token, whether copying dominated."""
    step_fn, state = text_step_fn(params, ctx, tctx)
    V = len(params.vocab.words)
    total = 0.0
    copied = []
    last = None
    for tok in ext_tokens:
        gen, cop, marg, states = _text_distribution(params, ctx, tctx, [state], [last])
        copy_mass = float(cop[0][tctx.step_ext[0] == tok].sum())
        gen_mass = float(gen[0][tok]) if tok < V else 0.0
        copied.append(copy_mass > gen_mass)
        total += float(np.log(marg[0][tok])) if marg[0][tok] > 0 else -np.inf
        state, last = states[0], tok
    return total, copied


@dataclass
class Generation:
    plan: ContentPlan
    tokens: list[str]
    copied: list[bool]
    plan_logprob: float
    text_logprob: float

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def default_limits(params: ModelParams) -> tuple[int, int]:
    max_plan = max(1, int(round(2 * params.avg_plan_len))) if params.avg_plan_len else 50
    max_tokens = max(1, int(round(1.5 * params.avg_summary_len))) if params.avg_summary_len else 200
    return max_plan, max_tokens


def generate_plan(params: ModelParams, table: RecordTable, beam: int = 5,
                  max_plan_len: int | None = None, ctx: TableContext | None = None,
                  greedy: bool = False, length_norm: bool = False) -> tuple[ContentPlan, float]:
    ctx = ctx or encode_table(params, table)
    if max_plan_len is None:
        max_plan_len = default_limits(params)[0]
    step, start = planner_step_fn(ctx, max_plan_len)
    R = len(table)
    if greedy:
        hyp = greedy_search(step, start, max_plan_len + 1, R)
    else:
        hyp = beam_search(step, start, beam, max_plan_len + 1, R, length_norm)
    return ContentPlan(tuple(t for t in hyp.tokens if t != R)), hyp.score


def generate(params: ModelParams, table: RecordTable, beam: int = 5,
             max_plan_len: int | None = None, max_tokens: int | None = None,
             plan: ContentPlan | None = None, greedy: bool = False,
             length_norm: bool = False) -> Generation:
    """Plan with the pointer network (unless ``plan`` is given), then realize it."""
    ctx = encode_table(params, table)
    default_plan, default_tokens = default_limits(params)
    max_tokens = max_tokens or default_tokens
    plan_lp = 0.0
    if plan is None:
        if params.config.use_planner:
            plan, plan_lp = generate_plan(params, table, beam, max_plan_len or default_plan, ctx, greedy,
                                          length_norm)
        else:
            plan = ContentPlan(tuple(range(len(table))))
    tctx = text_context(params, ctx, table, plan)
    step, start = text_step_fn(params, ctx, tctx)
    eos = params.vocab.eos
    if greedy:
        hyp = greedy_search(step, start, max_tokens + 1, eos)
    else:
        hyp = beam_search(step, start, beam, max_tokens + 1, eos, length_norm)
    ext = [t for t in hyp.tokens if t != eos]
    V = len(params.vocab.words)
    words = [params.vocab.words.symbol(t) if t < V else tctx.ext_words[t - V] for t in ext]
    _, copied = score_text(params, ctx, tctx, ext)
    return Generation(plan, words, copied, plan_lp, hyp.score)


def generation_to_json(gen: Generation, table: RecordTable) -> str:
    plan = [{"index": i, "value": table[i].value, "entity": table[i].entity,
             "type": table[i].rtype, "side": table[i].side} for i in gen.plan.steps]
    return json.dumps({"plan": plan, "summary": gen.text}, separators=(",", ":"))
