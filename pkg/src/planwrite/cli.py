"""Command-line entry point: ``planwrite <command> [options]``.

Commands
--------
make-data      write a seeded synthetic corpus as JSONL
extract-plans  re-derive content plans and copy labels for a corpus
train          fit a model and write checkpoints
generate       decode summaries for every table in a corpus
evaluate       score generated summaries against the gold corpus
template       write the rule-based baseline summaries

Exit status is 0 on success, 1 on a usage error and 2 when the command fails.
Set PLANWRITE_LOG to error, info or debug to control log output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from . import corpus
from .datamodel import ContentPlan, Summary
from .evaluation import evaluate_corpus, format_table, render_template
from .inference import generate, generation_to_json
from .model import CONDITIONAL, JOINT, ModelParams
from .training import TrainConfig, config_dict, train

log = logging.getLogger("planwrite")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    train: TrainConfig
    data: Path
    out: Path
    validation: Path | None = None

    def check_paths(self) -> None:
        for p in (self.data, self.validation):
            if p is not None and not p.is_file():
                raise FileNotFoundError(f"no such file: {p}")


# -- helpers --------------------------------------------------------------------


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _write_jsonl(path: Path, rows: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(row + "\n")


def _summary_json(summary: Summary) -> str:
    return json.dumps({"summary": " ".join(summary.tokens)}, separators=(",", ":"))


def _train_config(args) -> TrainConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            values = json.load(f)
        if not isinstance(values, dict):
            raise ValueError("config file must hold a JSON object")
    names = {f.name for f in fields(TrainConfig)}
    for name in names:
        v = getattr(args, name, None)
        if v is not None and v is not False:
            values[name] = v
    if args.copy is not None:
        values["copy_mode"] = args.copy
    return TrainConfig.from_dict(values)


# -- commands -------------------------------------------------------------------


def cmd_make_data(args) -> None:
    config = corpus.GameConfig(players_per_team=args.players, mentioned_players=args.mentioned)
    examples = corpus.generate_corpus(args.games, args.seed, config, workers=args.workers)
    corpus.save_dataset(args.out, examples)
    log.info("wrote %d games to %s", len(examples), args.out)


def cmd_extract_plans(args) -> None:
    if args.format == "rotowire":
        examples = corpus.load_rotowire(args.data)
    else:
        examples = [corpus.relabel(ex) for ex in corpus.load_dataset(args.data)]
    corpus.save_dataset(args.out, examples)
    lengths = [len(ex.plan) for ex in examples]
    log.info("extracted %d plans, mean length %.2f", len(examples),
             sum(lengths) / max(len(lengths), 1))


def cmd_train(args) -> None:
    run = RunConfig(_train_config(args), Path(args.data), Path(args.out),
                    Path(args.valid) if args.valid else None)
    run.check_paths()
    examples = corpus.load_dataset(run.data)
    validation = corpus.load_dataset(run.validation) if run.validation else None
    run.out.mkdir(parents=True, exist_ok=True)
    with open(run.out / "config.json", "w", encoding="utf-8") as f:
        json.dump(config_dict(run.train), f, indent=2, sort_keys=True)
    result = train(examples, run.train, validation, run.out)
    result.params.save(run.out / "last.npz")
    log.info("training finished; checkpoints in %s", run.out)


def cmd_generate(args) -> None:
    params = ModelParams.load(args.checkpoint)
    examples = corpus.load_dataset(args.data)
    rows = []
    for i, ex in enumerate(examples):
        plan = ex.plan if args.oracle_plan else None
        if plan is not None and len(plan) == 0:
            plan = ContentPlan(tuple(range(len(ex.table))))
        gen = generate(params, ex.table, beam=args.beam, plan=plan, greedy=args.greedy)
        rows.append(generation_to_json(gen, ex.table))
        log.debug("example %d: %d plan steps, %d tokens", i, len(gen.plan), len(gen.tokens))
    _write_jsonl(Path(args.out), rows)


def cmd_template(args) -> None:
    examples = corpus.load_dataset(args.data)
    _write_jsonl(Path(args.out), [_summary_json(render_template(ex.table)) for ex in examples])


def cmd_evaluate(args) -> None:
    gold = corpus.load_dataset(args.data)
    outputs = _read_jsonl(Path(args.outputs))
    if len(outputs) != len(gold):
        raise ValueError(f"{len(outputs)} outputs for {len(gold)} gold examples")
    candidates = [Summary.from_tokens(row["summary"].split()) for row in outputs]
    report = evaluate_corpus([ex.table for ex in gold], candidates, [ex.summary for ex in gold],
                             workers=args.workers, smooth_bleu=args.smooth)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    print(format_table({args.name: report}), file=sys.stderr if not args.report else sys.stdout)


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="planwrite", description="Content planning and generation for box-score summaries.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("make-data", help="generate a synthetic corpus")
    m.add_argument("--games", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--players", type=int, default=3, help="players per team")
    m.add_argument("--mentioned", type=int, default=3, help="players described per summary")
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_make_data)

    x = sub.add_parser("extract-plans", help="extract content plans and copy labels")
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--format", choices=("dataset", "rotowire"), default="dataset")
    x.set_defaults(func=cmd_extract_plans)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--valid")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--config", help="JSON file with TrainConfig keys")
    t.add_argument("--seed", type=int)
    t.add_argument("--copy", choices=(JOINT, CONDITIONAL))
    t.add_argument("--no-gate", dest="no_gate", action="store_true")
    t.add_argument("--no-planner", dest="no_planner", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-decay", dest="lr_decay", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--bptt", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="generate summaries")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--beam", type=int, default=5)
    g.add_argument("--greedy", action="store_true")
    g.add_argument("--oracle-plan", dest="oracle_plan", action="store_true",
                   help="realize the gold plan instead of predicting one")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score outputs against gold summaries")
    e.add_argument("--data", required=True, help="gold corpus JSONL")
    e.add_argument("--outputs", required=True, help="JSONL with a 'summary' field per line")
    e.add_argument("--report", help="write the JSON report here instead of stdout")
    e.add_argument("--name", default="system")
    e.add_argument("--smooth", action="store_true", help="add-one BLEU smoothing")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("template", help="rule-based baseline")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_template)
    return p


def _setup_logging() -> None:
    level = os.environ.get("PLANWRITE_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "workers", 1) < 1 or getattr(args, "beam", 1) < 1:
        print("planwrite: error: --workers and --beam must be >= 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (ValueError, OSError, KeyError, FloatingPointError, json.JSONDecodeError) as exc:
        print(f"planwrite {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
