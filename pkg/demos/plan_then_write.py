"""
Training a small planner-writer
===============================

"""

import logging
logging.basicConfig(level=logging.INFO, format="%(message)s")

from planwrite.corpus import generate_corpus
from planwrite.datamodel import Summary
from planwrite.evaluation import evaluate_corpus, format_table
from planwrite.inference import generate
from planwrite.model import teacher_forced_accuracy
from planwrite.training import TrainConfig, train

# a handful of games and a narrow model keep this to a minute or two on a laptop
games = generate_corpus(16, seed=1)
cfg = TrainConfig(epochs=80, hidden=24, dropout=0.0, batch_size=4, lr_decay=0.97, seed=0)
result = train(games, cfg)
params = result.params
print(teacher_forced_accuracy(params, games))

# stage one picks records and their order, stage two writes the text
out = generate(params, games[0].table, beam=5)
print(out.plan.steps)
print(games[0].plan.steps)
print(out.text)

# the same writer can be handed the gold plan instead of its own
oracle = generate(params, games[0].table, plan=games[0].plan)
print(oracle.text)

tables = [g.table for g in games]
gold = [g.summary for g in games]
rows = {
    "model plan": evaluate_corpus(tables, [Summary.from_tokens(generate(params, t).tokens) for t in tables], gold),
    "gold plan": evaluate_corpus(
        tables, [Summary.from_tokens(generate(params, g.table, plan=g.plan).tokens) for g in games], gold),
}
print(format_table(rows))
