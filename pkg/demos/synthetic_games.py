"""
A synthetic box score and its summary
=====================================

"""

# one game: a record table plus a summary whose numbers all come from it
from planwrite.corpus import generate_game, extract_relations
ex = generate_game(7)
print(len(ex.table), "records")
for r in list(ex.table)[:8]:
    print(r.rtype, r.entity, r.value, r.side)

print(ex.summary.text)

# the content plan points back into the table, in the order the text mentions things
for i in ex.plan.steps[:10]:
    print(i, ex.table[i].entity, ex.table[i].rtype, ex.table[i].value)

# the rule-based extractor recovers (entity, value, type, side) tuples from text
rels = extract_relations(ex.table, ex.summary)
print(len(rels), "relations, first:", rels.relations[0])

# copy labels mark summary tokens that restate a plan record's value
copied = [(t, lab.step) for t, lab in zip(ex.summary.tokens, ex.summary.copy_labels) if lab is not None]
print(copied[:10])
