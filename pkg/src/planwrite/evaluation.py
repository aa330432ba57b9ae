"""Automatic metrics (RG, CS, CO, BLEU, non-duplicate ratio) and the template baseline."""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Sequence

from .corpus import ExtractedRelations, extract_relations
from .datamodel import NAME_TYPES, RecordTable, Summary

log = logging.getLogger(__name__)

__all__ = [
    "MetricReport", "ExampleMetrics", "extract_relations", "relation_generation", "content_selection",
    "damerau_levenshtein", "content_ordering", "bleu", "duplicate_ratio", "render_template",
    "evaluate_example", "evaluate_corpus", "format_table",
]


def relation_generation(extracted: ExtractedRelations, table: RecordTable) -> tuple[int, float, bool]:
    """(unique supported relations, precision %, undefined flag).

    A relation is supported when the table holds a record with the same
    entity, value and type.
    """
    unique = extracted.unique()
    if not unique:
        log.debug("no relations extracted; RG precision reported as 100")
        return 0, 100.0, True
    supported = {r for r in unique if _supported(r, table)}
    return len(supported), 100.0 * len(supported) / len(unique), False


def _supported(rel, table: RecordTable) -> bool:
    idx = table.find(rel.entity, rel.rtype)
    return idx is not None and table[idx].value == rel.value


@dataclass(frozen=True)
class SetScores:
    precision: float
    recall: float
    precision_undefined: bool = False
    recall_undefined: bool = False


def content_selection(extracted_sys: Iterable[Hashable], extracted_gold: Iterable[Hashable]) -> SetScores:
    """Set precision and recall (percent) over unique relations.

    An empty system set has undefined precision and an empty gold set has
    undefined recall; both are reported as 100 with the matching flag raised.
    """
    sys_set, gold_set = set(extracted_sys), set(extracted_gold)
    hit = len(sys_set & gold_set)
    p_undef, r_undef = not sys_set, not gold_set
    precision = 100.0 if p_undef else 100.0 * hit / len(sys_set)
    recall = 100.0 if r_undef else 100.0 * hit / len(gold_set)
    return SetScores(precision, recall, p_undef, r_undef)


def damerau_levenshtein(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Unrestricted Damerau-Levenshtein distance (unit-cost Lowrance-Wagner recurrence)."""
    n, m = len(a), len(b)
    big = n + m
    # row/column 0 hold the sentinel, so d[i + 1][j + 1] is the distance of a[:i], b[:j]
    d = [[big] * (m + 2)] + [[big, i] + [0] * m for i in range(n + 1)]
    d[1][1:] = list(range(m + 1))
    last_row: dict[Hashable, int] = {}
    for i in range(1, n + 1):
        ai = a[i - 1]
        last_col = 0
        row, up = d[i + 1], d[i]
        for j in range(1, m + 1):
            k = last_row.get(b[j - 1], 0)
            l = last_col
            if ai == b[j - 1]:
                cost = 0
                last_col = j
            else:
                cost = 1
            row[j + 1] = min(up[j] + cost, row[j] + 1, up[j + 1] + 1,
                             d[k][l] + (i - k - 1) + 1 + (j - l - 1))
        last_row[ai] = i
    return d[n + 1][m + 1]


def content_ordering(seq_sys: Sequence[Hashable], seq_gold: Sequence[Hashable]) -> float:
    """Normalized DLD similarity in percent; 100 when both sequences are empty."""
    longest = max(len(seq_sys), len(seq_gold))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - damerau_levenshtein(seq_sys, seq_gold) / longest)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
         max_n: int = 4, smooth: bool = False) -> float:
    """Corpus-level BLEU with one reference per candidate.

    Clipped n-gram counts are pooled over the corpus before taking the
    geometric mean. Without ``smooth`` any zero precision gives 0; with it,
    orders above 1 get add-one counts.
    """
    if len(candidates) == 0:
        raise ValueError("BLEU needs at least one candidate")
    if len(candidates) != len(references):
        raise ValueError("need exactly one reference per candidate")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            c, r = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(k, r[g]) for g, k in c.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        num, den = matches[n], totals[n]
        if smooth and n > 0:
            num, den = num + 1, den + 1
        if num == 0 or den == 0:
            return 0.0
        log_p += math.log(num / den) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def duplicate_ratio(extracted: Sequence[Hashable]) -> tuple[float, bool]:
    """(percent of non-duplicate items, empty flag)."""
    if len(extracted) == 0:
        return 100.0, True
    return 100.0 * len(set(extracted)) / len(extracted), False


# -- template baseline -----------------------------------------------------------

TEMPLATE_PLAYERS = 6


def _require(table: RecordTable, entity: str, rtype: str) -> str:
    value = table.value_of(entity, rtype) if table.find(entity, rtype) is not None else None
    if value is None:
        raise ValueError(f"template needs a {rtype} record for {entity}")
    return value


def render_template(table: RecordTable, players: int = TEMPLATE_PLAYERS) -> Summary:
    """Fixed-frame summary: who won, the top scorers, and a closing line."""
    teams = [e for e in table.entities if table.find(e, "TEAM-PTS") is not None]
    if len(teams) != 2:
        raise ValueError(f"template needs exactly two teams with TEAM-PTS, found {len(teams)}")
    win, lose = sorted(teams, key=lambda e: (-int(_require(table, e, "TEAM-PTS")), teams.index(e)))

    def team_words(e):
        return [_require(table, e, "TEAM-CITY"), _require(table, e, "TEAM-NAME")]

    def record(e):
        return ["(", _require(table, e, "TEAM-WINS"), "-", _require(table, e, "TEAM-LOSSES"), ")"]

    tokens: list[str] = []
    starts: list[int] = []

    def sentence(words):
        starts.append(len(tokens))
        tokens.extend(words)

    sentence(["The", *team_words(win), *record(win), "defeated", "the", *team_words(lose), *record(lose),
              _require(table, win, "TEAM-PTS"), "-", _require(table, lose, "TEAM-PTS"), "."])
    roster = [e for e in table.entities if e not in teams and table.find(e, "PTS") is not None]
    roster.sort(key=lambda e: (-int(_require(table, e, "PTS")), e))
    if len(roster) < players:
        log.info("template: %d players available, writing %d player sentences", len(roster), len(roster))
    for e in roster[:players]:
        sentence([_require(table, e, "FIRST_NAME"), _require(table, e, "SECOND_NAME"), "scored",
                  _require(table, e, "PTS"), "points", "(", _require(table, e, "FGM"), "-",
                  _require(table, e, "FGA"), "FG", ")", "to", "go", "with", _require(table, e, "REB"),
                  "rebounds", "."])
    sentence(["The", _require(table, win, "TEAM-NAME"), "will", "try", "to", "keep", "it", "going",
              "in", "their", "next", "game", "."])
    return Summary(tuple(tokens), tuple(starts))


# -- corpus evaluation -------------------------------------------------------------


@dataclass
class ExampleMetrics:
    rg_count: int
    rg_precision: float
    cs_precision: float
    cs_recall: float
    co_dld_pct: float
    nondup_pct: float
    flags: tuple[str, ...] = ()


@dataclass
class MetricReport:
    rg_count: float
    rg_precision: float
    cs_precision: float
    cs_recall: float
    co_dld_pct: float
    bleu: float
    nondup_pct: float
    examples: int = 0
    flags: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("rg_precision", "cs_precision", "cs_recall", "co_dld_pct", "nondup_pct"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if not 0.0 <= self.bleu <= 1.0 + 1e-12:
            raise ValueError(f"bleu={self.bleu} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _content_tuples(rel: ExtractedRelations) -> list[tuple]:
    # name introductions are bookkeeping for the planner, not content
    return [r.as_tuple() for r in rel.relations if r.rtype not in NAME_TYPES]


def evaluate_example(table: RecordTable, candidate: Summary, gold: Summary) -> ExampleMetrics:
    sys_rel = extract_relations(table, candidate)
    gold_rel = extract_relations(table, gold)
    sys_seq, gold_seq = _content_tuples(sys_rel), _content_tuples(gold_rel)
    content_only = ExtractedRelations(
        [r for r in sys_rel.relations if r.rtype not in NAME_TYPES])
    count, precision, rg_undef = relation_generation(content_only, table)
    cs = content_selection(sys_seq, gold_seq)
    nondup, empty = duplicate_ratio(sys_seq)
    flags = [name for name, on in (("rg_undefined", rg_undef), ("cs_precision_undefined", cs.precision_undefined),
                                   ("cs_recall_undefined", cs.recall_undefined), ("nondup_empty", empty)) if on]
    return ExampleMetrics(count, precision, cs.precision, cs.recall, content_ordering(sys_seq, gold_seq),
                          nondup, tuple(flags))


def _evaluate_args(args):
    return evaluate_example(*args)


def evaluate_corpus(tables: Sequence[RecordTable], candidates: Sequence[Summary], golds: Sequence[Summary],
                    workers: int = 1, smooth_bleu: bool = False) -> MetricReport:
    """Per-summary metrics averaged over the corpus; BLEU is corpus-level."""
    if not (len(tables) == len(candidates) == len(golds)):
        raise ValueError("tables, candidates and golds must align")
    if not tables:
        raise ValueError("cannot evaluate an empty corpus")
    jobs = list(zip(tables, candidates, golds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            per = list(pool.map(_evaluate_args, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        per = [_evaluate_args(j) for j in jobs]
    flags: Counter = Counter(f for m in per for f in m.flags)

    def mean(name):
        # math.fsum keeps the result independent of example order
        return math.fsum(getattr(m, name) for m in per) / len(per)

    return MetricReport(
        rg_count=mean("rg_count"), rg_precision=mean("rg_precision"),
        cs_precision=mean("cs_precision"), cs_recall=mean("cs_recall"),
        co_dld_pct=mean("co_dld_pct"),
        bleu=bleu([c.tokens for c in candidates], [g.tokens for g in golds], smooth=smooth_bleu),
        nondup_pct=mean("nondup_pct"), examples=len(per), flags=dict(sorted(flags.items())),
    )


def format_table(rows: dict[str, MetricReport]) -> str:
    """Plain-text results table, one row per system."""
    header = ("System", "RG #", "RG P%", "CS P%", "CS R%", "CO DLD%", "BLEU")
    lines = [header]
    for name, r in rows.items():
        lines.append((name, f"{r.rg_count:.2f}", f"{r.rg_precision:.2f}", f"{r.cs_precision:.2f}",
                      f"{r.cs_recall:.2f}", f"{r.co_dld_pct:.2f}", f"{100 * r.bleu:.2f}"))
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    out = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
           for row in lines]
    out.insert(1, "-" * len(out[0]))
    return "\n".join(out)
