"""Records, tables, content plans, summaries and vocabularies."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

HOME = "HOME"
VISITING = "VISITING"
SIDES = (HOME, VISITING)

UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
EOP = "<eop>"
PAD = "<pad>"

# record types that introduce an entity's surface name rather than a statistic
NAME_TYPES = ("FIRST_NAME", "SECOND_NAME", "TEAM-CITY", "TEAM-NAME")


@dataclass(frozen=True)
class Record:
    rtype: str
    entity: str
    value: str
    side: str

    def __post_init__(self):
        for name in ("rtype", "entity", "value", "side"):
            if not getattr(self, name):
                raise ValueError(f"record field {name!r} is empty")
        if self.side not in SIDES:
            raise ValueError(f"record side must be HOME or VISITING, got {self.side!r}")

    def to_list(self) -> list[str]:
        return [self.rtype, self.entity, self.value, self.side]

    @classmethod
    def from_list(cls, items: Sequence[str]) -> "Record":
        if len(items) != 4:
            raise ValueError(f"record needs 4 fields, got {len(items)}")
        return cls(*items)


class RecordTable:
    """Ordered record list with an entity index. Order carries no meaning."""

    def __init__(self, records: Iterable[Record]):
        self.records: tuple[Record, ...] = tuple(records)
        index: dict[str, list[int]] = {}
        for i, rec in enumerate(self.records):
            index.setdefault(rec.entity, []).append(i)
        self._index = {k: tuple(v) for k, v in index.items()}

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> Record:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, RecordTable) and self.records == other.records

    def __repr__(self) -> str:
        return f"RecordTable({len(self.records)} records, {len(self._index)} entities)"

    @property
    def entities(self) -> tuple[str, ...]:
        return tuple(self._index)

    def positions(self, entity: str) -> tuple[int, ...]:
        return self._index.get(entity, ())

    def find(self, entity: str, rtype: str) -> int | None:
        for i in self.positions(entity):
            if self.records[i].rtype == rtype:
                return i
        return None

    def value_of(self, entity: str, rtype: str) -> str:
        i = self.find(entity, rtype)
        if i is None:
            raise KeyError(f"no {rtype} record for {entity}")
        return self.records[i].value


@dataclass(frozen=True)
class ContentPlan:
    """Record positions in verbalization order (end-of-plan is implicit)."""

    steps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, k):
        return self.steps[k]

    def validate(self, table: RecordTable) -> "ContentPlan":
        size = len(table)
        for k, s in enumerate(self.steps):
            if not 0 <= s < size:
                raise ValueError(f"plan step {k} points at {s}, table has {size} records")
        return self

    def records(self, table: RecordTable) -> list[Record]:
        return [table[s] for s in self.steps]


@dataclass(frozen=True)
class CopyLabel:
    step: int  # index into the content plan, not the table


@dataclass(frozen=True)
class Summary:
    tokens: tuple[str, ...]
    sentence_starts: tuple[int, ...]
    copy_labels: tuple[CopyLabel | None, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "sentence_starts", tuple(int(s) for s in self.sentence_starts))
        starts = self.sentence_starts
        if self.tokens and (not starts or starts[0] != 0):
            raise ValueError("first sentence must start at token 0")
        for a, b in zip(starts, starts[1:]):
            if b <= a:
                raise ValueError("sentence offsets must be strictly increasing")
        if starts and starts[-1] >= max(len(self.tokens), 1):
            raise ValueError("sentence offset out of bounds")
        if self.copy_labels is not None:
            labels = tuple(self.copy_labels)
            if len(labels) != len(self.tokens):
                raise ValueError("one copy label per token required")
            object.__setattr__(self, "copy_labels", labels)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Summary":
        """Split on sentence-final periods."""
        starts = [0] if tokens else []
        for i, tok in enumerate(tokens[:-1]):
            if tok == ".":
                starts.append(i + 1)
        return cls(tuple(tokens), tuple(starts))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def sentences(self) -> list[tuple[int, int]]:
        bounds = list(self.sentence_starts) + [len(self.tokens)]
        return list(zip(bounds, bounds[1:]))

    def sentence_of(self) -> list[int]:
        out = []
        for s, (a, b) in enumerate(self.sentences()):
            out.extend([s] * (b - a))
        return out

    def check_labels(self, plan: ContentPlan) -> None:
        if self.copy_labels is None:
            return
        for t, lab in enumerate(self.copy_labels):
            if lab is not None and not 0 <= lab.step < len(plan):
                raise ValueError(f"copy label at token {t} points past the plan")


class Vocab:
    """Dense symbol <-> id map; id 0 is always UNK."""

    def __init__(self, symbols: Iterable[str], reserved: Sequence[str] = (UNK,)):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for s in list(reserved) + list(symbols):
            if s not in self.stoi:
                self.stoi[s] = len(self.itos)
                self.itos.append(s)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, s: str) -> bool:
        return s in self.stoi

    def id(self, s: str) -> int:
        return self.stoi.get(s, 0)

    def symbol(self, i: int) -> str:
        return self.itos[i]


@dataclass
class Vocabulary:
    rtype: Vocab
    entity: Vocab
    value: Vocab
    side: Vocab
    words: Vocab
    min_count: int = 1
    word_counts: dict[str, int] = field(default_factory=dict)

    @property
    def unk(self) -> int:
        return self.words.id(UNK)

    @property
    def bos(self) -> int:
        return self.words.id(BOS)

    @property
    def eos(self) -> int:
        return self.words.id(EOS)

    def to_dict(self) -> dict:
        return {
            "min_count": self.min_count,
            "rtype": self.rtype.itos,
            "entity": self.entity.itos,
            "value": self.value.itos,
            "side": self.side.itos,
            "words": self.words.itos,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            rtype=Vocab(d["rtype"], reserved=()),
            entity=Vocab(d["entity"], reserved=()),
            value=Vocab(d["value"], reserved=()),
            side=Vocab(d["side"], reserved=()),
            words=Vocab(d["words"], reserved=()),
            min_count=d.get("min_count", 1),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_vocabulary(corpus: Sequence[tuple[RecordTable, Summary]], min_count: int = 1) -> Vocabulary:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    feats: tuple[dict, ...] = ({}, {}, {}, {})
    for table, summary in corpus:
        counts.update(summary.tokens)
        for rec in table:
            for d, v in zip(feats, rec.to_list()):
                d.setdefault(v, None)
    # first-seen order keeps ids stable for a fixed corpus
    kept = [w for w in dict.fromkeys(t for _, s in corpus for t in s.tokens) if counts[w] >= min_count]
    return Vocabulary(
        rtype=Vocab(feats[0]),
        entity=Vocab(feats[1]),
        value=Vocab(feats[2]),
        side=Vocab(feats[3]),
        words=Vocab(kept, reserved=(UNK, PAD, BOS, EOS)),
        min_count=min_count,
        word_counts=dict(counts),
    )


def featurize_record(rec: Record, vocab: Vocabulary) -> tuple[int, int, int, int]:
    return (
        vocab.rtype.id(rec.rtype),
        vocab.entity.id(rec.entity),
        vocab.value.id(rec.value),
        vocab.side.id(rec.side),
    )


def unfeaturize(ids: Sequence[int], vocab: Vocabulary) -> Record:
    return Record(
        vocab.rtype.symbol(ids[0]),
        vocab.entity.symbol(ids[1]),
        vocab.value.symbol(ids[2]),
        vocab.side.symbol(ids[3]),
    )
