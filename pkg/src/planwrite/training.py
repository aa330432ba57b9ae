"""Joint maximum-likelihood training with Adagrad and truncated BPTT."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numcore as nc
from .corpus import DatasetExample
from .datamodel import Vocabulary, build_vocabulary
from .model import (
    CONDITIONAL, Batch, Dropout, ModelConfig, ModelParams, forward, make_batch, teacher_forced_accuracy,
)

log = logging.getLogger(__name__)

# training examples scored for plan accuracy when no validation set is given
PROBE_SIZE = 32


@dataclass
class TrainConfig:
    epochs: int = 25
    lr: float = 0.15
    lr_decay: float = 0.5
    batch_size: int = 5
    dropout: float = 0.3
    bptt: int = 100
    seed: int = 0
    copy_mode: str = CONDITIONAL
    no_gate: bool = False
    no_planner: bool = False
    hidden: int = 600
    min_count: int = 1
    clip_norm: float | None = 5.0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.bptt < 1:
            raise ValueError("bptt truncation must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(hidden=self.hidden, copy_mode=self.copy_mode,
                           use_gate=not self.no_gate, use_planner=not self.no_planner)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdagradState:
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)
    eps: float = 1e-10


def adagrad_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: AdagradState, lr: float) -> None:
    """In-place ``acc += g^2; p -= lr * g / (sqrt(acc) + eps)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(p, dtype=np.float64)
        acc += np.square(g, dtype=np.float64)
        p -= lr * g / (np.sqrt(acc) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def bptt_segments(tokens: Sequence, truncation: int) -> list[tuple[int, int]]:
    """Consecutive [start, stop) spans of at most ``truncation`` tokens."""
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    return [(s, min(s + truncation, len(tokens))) for s in range(0, len(tokens), truncation)]


def example_loss(example: DatasetExample, params: ModelParams, truncation: int | None = None) -> dict:
    """-log p(z|r) - log p(y|r,z) for one example, teacher forced on both stages."""
    batch = make_batch([example], params.vocab, params.config)
    g = nc.Graph(grad=False)
    fw = forward(g, params, batch, truncation)
    plan = float(fw.plan_nll.data[0]) if fw.plan_nll is not None else 0.0
    text = float(fw.text_nll.data[0])
    clamped = plan + text >= -nc.LOG_ZERO
    if clamped:
        log.warning("zero-probability gold event clamped in example loss")
    return {"loss": plan + text, "plan_nll": plan, "text_nll": text, "clamped": clamped}


def batch_gradients(params: ModelParams, batch: Batch, config: TrainConfig,
                    rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    g = nc.Graph()
    drop = Dropout(config.dropout, rng)
    fw = forward(g, params, batch, config.bptt, drop)
    loss = float(fw.loss.data)
    if not math.isfinite(loss):
        raise FloatingPointError("loss became NaN/inf")
    return loss, g.backward(fw.loss)


def make_batches(examples: list[DatasetExample], batch_size: int) -> list[list[int]]:
    """Group indices by summary length so padding stays small."""
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i].summary.tokens), i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def corpus_loss(params: ModelParams, examples: list[DatasetExample], batch_size: int,
                truncation: int | None = None) -> float:
    """Mean per-example objective (no dropout)."""
    total = 0.0
    for idx in make_batches(examples, batch_size):
        batch = make_batch([examples[i] for i in idx], params.vocab, params.config)
        fw = forward(nc.Graph(grad=False), params, batch, truncation)
        total += float(fw.loss.data) * batch.size
    return total / max(len(examples), 1)


@dataclass
class TrainResult:
    params: ModelParams
    best: ModelParams
    log: list[dict]


def train(corpus: list[DatasetExample], config: TrainConfig,
          validation: list[DatasetExample] | None = None,
          out_dir: str | Path | None = None,
          vocab: Vocabulary | None = None) -> TrainResult:
    """Train both stages jointly. Deterministic for a fixed seed.

    The learning rate is multiplied by ``lr_decay`` whenever the epoch's
    validation loss (training loss when no validation set is given) fails to
    improve. With ``out_dir`` set, writes ``epoch_XXX.npz``, ``best.npz`` and
    ``train_log.jsonl``.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    vocab = vocab or build_vocabulary([(e.table, e.summary) for e in corpus], config.min_count)
    params = ModelParams.initialize(config.model_config(), vocab, config.seed, config.init_scale)
    params.avg_plan_len = float(np.mean([len(e.plan) for e in corpus]))
    params.avg_summary_len = float(np.mean([len(e.summary.tokens) for e in corpus]))
    rng = np.random.default_rng(config.seed + 1)
    state = AdagradState()
    lr = config.lr
    best_loss = math.inf
    best = params.copy()
    history: list[dict] = []
    batches = make_batches(corpus, config.batch_size)
    prepared = [make_batch([corpus[i] for i in idx], vocab, params.config) for idx in batches]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.jsonl", "w", encoding="utf-8")
    try:
        for epoch in range(1, config.epochs + 1):
            total = 0.0
            for b in rng.permutation(len(prepared)):
                batch = prepared[b]
                loss, grads = batch_gradients(params, batch, config, rng)
                clip_global_norm(grads, config.clip_norm)
                adagrad_step(params.arrays, grads, state, lr)
                total += loss * batch.size
            train_loss = total / len(corpus)
            if not math.isfinite(train_loss):
                raise FloatingPointError(f"training diverged at epoch {epoch}")
            val_loss = (corpus_loss(params, validation, config.batch_size, config.bptt)
                        if validation else train_loss)
            entry = {"epoch": epoch, "train_loss": round(train_loss, 6), "val_loss": round(val_loss, 6),
                     "lr": lr}
            if params.config.use_planner:
                probe = validation or corpus[:PROBE_SIZE]
                entry["plan_accuracy"] = round(teacher_forced_accuracy(params, probe)["plan_step_accuracy"], 6)
            history.append(entry)
            log.info("epoch %d train %.4f val %.4f lr %.4g", epoch, train_loss, val_loss, lr)
            if out is not None:
                log_file.write(json.dumps(entry, sort_keys=True) + "\n")
                log_file.flush()
                params.save(out / f"epoch_{epoch:03d}.npz")
            if val_loss < best_loss:
                best_loss = val_loss
                best = params.copy()
                if out is not None:
                    best.save(out / "best.npz")
            else:
                lr *= config.lr_decay
    finally:
        if out is not None:
            log_file.close()
    return TrainResult(params, best, history)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
