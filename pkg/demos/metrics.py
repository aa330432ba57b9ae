"""
Scoring generated summaries
===========================

"""

from planwrite.corpus import generate_corpus
from planwrite.evaluation import (
    bleu, content_ordering, damerau_levenshtein, evaluate_corpus, format_table, render_template,
)

# edit distance with adjacent swaps: one transposition costs 1
print(damerau_levenshtein("abc", "acb"), content_ordering("abc", "acb"))
print(damerau_levenshtein("CA", "ABC"))

# corpus BLEU on a candidate that drops the last word
cand = "the cat sat on the".split()
ref = "the cat sat on the mat".split()
print(bleu([cand], [ref]))

# the template baseline only states facts read straight off the table,
# so every relation it produces is supported
games = generate_corpus(30, seed=3)
tables = [g.table for g in games]
gold = [g.summary for g in games]
print(render_template(tables[0]).text)

rows = {
    "gold": evaluate_corpus(tables, gold, gold),
    "template": evaluate_corpus(tables, [render_template(t) for t in tables], gold),
}
print(format_table(rows))
