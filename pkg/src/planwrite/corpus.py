"""Synthetic box-score games, plan extraction, copy supervision and dataset files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datamodel import (
    HOME,
    NAME_TYPES,
    VISITING,
    ContentPlan,
    CopyLabel,
    Record,
    RecordTable,
    Summary,
)

log = logging.getLogger(__name__)

TEAMS = (
    ("Boston", "Celtics"), ("Indiana", "Pacers"), ("Miami", "Heat"), ("Chicago", "Bulls"),
    ("Denver", "Nuggets"), ("Phoenix", "Suns"), ("Toronto", "Raptors"), ("Atlanta", "Hawks"),
    ("Houston", "Rockets"), ("Dallas", "Mavericks"), ("Memphis", "Grizzlies"), ("Utah", "Jazz"),
    ("Sacramento", "Kings"), ("Milwaukee", "Bucks"), ("Detroit", "Pistons"), ("Cleveland", "Cavaliers"),
)
FIRST_NAMES = (
    "Isaiah", "Kelly", "Avery", "Marcus", "Jae", "Terry", "Miles", "Paul", "Jeff", "Monta",
    "Rodney", "Glenn", "Kevin", "Stephen", "Draymond", "Klay", "Andre", "Zaza", "Tony", "Danny",
)
SECOND_NAMES = (
    "Thomas", "Olynyk", "Bradley", "Smart", "Crowder", "Rozier", "Turner", "George", "Teague", "Ellis",
    "Stuckey", "Robinson", "Durant", "Curry", "Green", "Thompson", "Iguodala", "Pachulia", "Allen", "Young",
    "Horford", "Brown", "Jackson", "Harris", "Walker", "Lowry",
)

TEAM_STATS = ("TEAM-WINS", "TEAM-LOSSES", "TEAM-PTS", "TEAM-FG_PCT", "TEAM-REB", "TEAM-AST")
PLAYER_STATS = ("PTS", "REB", "AST", "FGM", "FGA")

NUMBER_WORDS = {
    w: str(i) for i, w in enumerate(
        "zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
        "fifteen sixteen seventeen eighteen nineteen twenty".split()
    )
}
STAT_CUES = {
    "points": "PTS", "point": "PTS",
    "rebounds": "REB", "rebound": "REB",
    "assists": "AST", "assist": "AST",
    "percent": "FG_PCT",
}


@dataclass
class GameConfig:
    players_per_team: int = 3
    mentioned_players: int = 3
    winner_pts: tuple[int, int] = (90, 125)
    loser_margin: tuple[int, int] = (1, 20)
    record_range: tuple[int, int] = (0, 30)
    fg_pct_range: tuple[int, int] = (38, 55)
    team_reb_range: tuple[int, int] = (35, 55)
    team_ast_range: tuple[int, int] = (15, 30)
    fga_range: tuple[int, int] = (3, 22)
    reb_range: tuple[int, int] = (0, 14)
    ast_range: tuple[int, int] = (0, 11)
    team_sentence_prob: float = 0.5

    def validate(self) -> "GameConfig":
        for name in ("winner_pts", "loser_margin", "record_range", "fg_pct_range",
                     "team_reb_range", "team_ast_range", "fga_range", "reb_range", "ast_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if self.loser_margin[0] < 1:
            raise ValueError("loser_margin must be at least 1 so the winner outscores the loser")
        if self.fga_range[0] < 1:
            raise ValueError("fga_range must start at 1")
        if not 1 <= self.players_per_team <= min(len(FIRST_NAMES), len(SECOND_NAMES)) // 2:
            raise ValueError("players_per_team out of range for the name pools")
        if self.mentioned_players < 0:
            raise ValueError("mentioned_players must be >= 0")
        return self


@dataclass
class TeamSpec:
    city: str
    name: str
    wins: int
    losses: int
    pts: int
    fg_pct: int
    reb: int
    ast: int
    side: str


@dataclass
class PlayerSpec:
    first: str
    second: str
    pts: int
    reb: int
    ast: int
    fgm: int
    fga: int
    side: str

    @property
    def entity(self) -> str:
        return f"{self.first}_{self.second}"


@dataclass
class GameSpec:
    home: TeamSpec
    visiting: TeamSpec
    players: list[PlayerSpec]
    seed: int

    @property
    def winner(self) -> TeamSpec:
        return self.home if self.home.pts > self.visiting.pts else self.visiting

    @property
    def loser(self) -> TeamSpec:
        return self.visiting if self.home.pts > self.visiting.pts else self.home


@dataclass
class DatasetExample:
    table: RecordTable
    summary: Summary
    plan: ContentPlan

    def __eq__(self, other) -> bool:
        return (isinstance(other, DatasetExample) and self.table == other.table
                and self.summary == other.summary and self.plan == other.plan)


# -- synthetic games ------------------------------------------------------------


def sample_game(seed: int, config: GameConfig | None = None) -> GameSpec:
    config = (config or GameConfig()).validate()
    rng = np.random.default_rng(seed)

    def draw(lo_hi):
        return int(rng.integers(lo_hi[0], lo_hi[1] + 1))

    home_i, vis_i = rng.choice(len(TEAMS), size=2, replace=False)
    win_pts = draw(config.winner_pts)
    lose_pts = win_pts - draw(config.loser_margin)
    home_wins = bool(rng.integers(2))
    teams = {}
    for side, ti, won in ((HOME, home_i, home_wins), (VISITING, vis_i, not home_wins)):
        city, name = TEAMS[ti]
        teams[side] = TeamSpec(
            city=city, name=name,
            wins=draw(config.record_range), losses=draw(config.record_range),
            pts=win_pts if won else lose_pts,
            fg_pct=draw(config.fg_pct_range), reb=draw(config.team_reb_range),
            ast=draw(config.team_ast_range), side=side,
        )
    n_players = 2 * config.players_per_team
    firsts = rng.choice(len(FIRST_NAMES), size=n_players, replace=False)
    seconds = rng.choice(len(SECOND_NAMES), size=n_players, replace=False)
    players = []
    for i in range(n_players):
        fga = draw(config.fga_range)
        fgm = int(rng.integers(1, fga + 1)) if fga > 1 else 1
        players.append(PlayerSpec(
            first=FIRST_NAMES[firsts[i]], second=SECOND_NAMES[seconds[i]],
            pts=2 * fgm + int(rng.integers(0, 9)),
            reb=draw(config.reb_range), ast=draw(config.ast_range),
            fgm=fgm, fga=fga,
            side=HOME if i < config.players_per_team else VISITING,
        ))
    return GameSpec(teams[HOME], teams[VISITING], players, seed)


def game_table(game: GameSpec) -> RecordTable:
    records = []
    for team in (game.home, game.visiting):
        values = (team.city, team.name, team.wins, team.losses, team.pts, team.fg_pct, team.reb, team.ast)
        for rtype, value in zip(("TEAM-CITY", "TEAM-NAME") + TEAM_STATS, values):
            records.append(Record(rtype, team.name, str(value), team.side))
    for p in game.players:
        values = (p.first, p.second, p.pts, p.reb, p.ast, p.fgm, p.fga)
        for rtype, value in zip(("FIRST_NAME", "SECOND_NAME") + PLAYER_STATS, values):
            records.append(Record(rtype, p.entity, str(value), p.side))
    return RecordTable(records)


class _Writer:
    """Token buffer that logs which record each emitted slot verbalizes."""

    def __init__(self, table: RecordTable):
        self.table = table
        self.tokens: list[str] = []
        self.starts: list[int] = []
        self.log: list[tuple[int, int]] = []
        self.introduced: set[str] = set()

    def sentence(self, *parts):
        self.starts.append(len(self.tokens))
        for part in parts:
            if isinstance(part, tuple):
                kind = part[0]
                if kind == "stat":
                    _, entity, rtype = part
                    idx = self.table.find(entity, rtype)
                    self.log.append((len(self.tokens), idx))
                    self.tokens.append(self.table[idx].value)
                else:  # name mention; name records are logged on first mention only
                    _, entity, rtypes = part
                    first = entity not in self.introduced
                    self.introduced.add(entity)
                    for rtype in rtypes:
                        idx = self.table.find(entity, rtype)
                        if first:
                            self.log.append((len(self.tokens), idx))
                        self.tokens.append(self.table[idx].value)
            else:
                self.tokens.extend(part.split())


def _team_mention(team: TeamSpec, full: bool = True):
    return ("name", team.name, ("TEAM-CITY", "TEAM-NAME") if full else ("TEAM-NAME",))


def render_game(game: GameSpec, config: GameConfig | None = None) -> tuple[RecordTable, Summary, ContentPlan]:
    """Verbalize a game. Returns the table, summary and the writer's own plan log."""
    config = config or GameConfig()
    rng = np.random.default_rng([game.seed, 1])
    table = game_table(game)
    w = _Writer(table)
    win, lose = game.winner, game.loser
    role = "host" if lose.side == HOME else "visiting"
    w.sentence(
        "The", _team_mention(win), "(", ("stat", win.name, "TEAM-WINS"), "-",
        ("stat", win.name, "TEAM-LOSSES"), ") defeated the", role, _team_mention(lose), "(",
        ("stat", lose.name, "TEAM-WINS"), "-", ("stat", lose.name, "TEAM-LOSSES"), ")",
        ("stat", win.name, "TEAM-PTS"), "-", ("stat", lose.name, "TEAM-PTS"), ".",
    )
    ranked = sorted(game.players, key=lambda p: (-p.pts, p.entity))
    for p in ranked[:config.mentioned_players]:
        who = ("name", p.entity, ("FIRST_NAME", "SECOND_NAME"))
        e = p.entity
        choice = int(rng.integers(3))
        if choice == 0:
            w.sentence(who, "scored", ("stat", e, "PTS"), "points on", ("stat", e, "FGM"),
                       "- of -", ("stat", e, "FGA"), "shooting .")
        elif choice == 1:
            w.sentence(who, "added", ("stat", e, "PTS"), "points and", ("stat", e, "REB"), "rebounds .")
        else:
            w.sentence(who, "finished with", ("stat", e, "PTS"), "points ,", ("stat", e, "REB"),
                       "rebounds and", ("stat", e, "AST"), "assists .")
    if rng.random() < config.team_sentence_prob:
        team = win if rng.random() < 0.5 else lose
        w.sentence("The", _team_mention(team, full=False), "shot", ("stat", team.name, "TEAM-FG_PCT"),
                   "percent from the field .")
    w.sentence("The", _team_mention(lose, full=False), "will look to bounce back in their next game .")
    plan = ContentPlan(tuple(idx for _, idx in sorted(w.log, key=lambda x: x[0])))
    summary = Summary(tuple(w.tokens), tuple(w.starts))
    return table, summary, plan.validate(table)


def generate_game(seed: int, config: GameConfig | None = None) -> DatasetExample:
    """One synthetic example with gold plan and copy labels. Pure function of the seed."""
    config = config or GameConfig()
    table, summary, plan = render_game(sample_game(seed, config), config)
    return DatasetExample(table, mark_copy_targets(summary, plan, table), plan)


def generate_corpus(n_games: int, seed: int, config: GameConfig | None = None,
                    workers: int = 1) -> list[DatasetExample]:
    seeds = [seed * 100_003 + i for i in range(n_games)]
    if workers <= 1:
        return [generate_game(s, config) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor
    from functools import partial

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(generate_game, config=config), seeds, chunksize=8))


# -- extraction ---------------------------------------------------------------


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    entity: str
    parts: tuple[tuple[int, str], ...]  # (token position, name record type)


@dataclass(frozen=True)
class Relation:
    entity: str
    value: str
    rtype: str
    side: str

    def as_tuple(self) -> tuple[str, str, str, str]:
        return (self.entity, self.value, self.rtype, self.side)


@dataclass
class ExtractedRelations:
    """Relations in order of first token position; ``positions`` holds table rows or None."""

    relations: list[Relation] = field(default_factory=list)
    positions: list[int | None] = field(default_factory=list)
    token_positions: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.relations)

    def unique(self) -> set[Relation]:
        return set(self.relations)


def normalize_number(token: str) -> str | None:
    tok = NUMBER_WORDS.get(token.lower(), token)
    return tok if tok.isdigit() else None


def _surface_forms(table: RecordTable) -> dict[tuple[str, ...], list[tuple[str, tuple[str, ...]]]]:
    forms: dict[tuple[str, ...], list[tuple[str, tuple[str, ...]]]] = {}

    def add(tokens: list[str], entity: str, types: list[str]):
        key = tuple(tokens)
        entries = forms.setdefault(key, [])
        if all(e != entity for e, _ in entries):
            entries.append((entity, tuple(types)))

    for entity in table.entities:
        vals = {table[i].rtype: table[i].value for i in table.positions(entity)}
        first, second = vals.get("FIRST_NAME"), vals.get("SECOND_NAME")
        city, name = vals.get("TEAM-CITY"), vals.get("TEAM-NAME")
        if first and second:
            add(first.split() + second.split(), entity,
                ["FIRST_NAME"] * len(first.split()) + ["SECOND_NAME"] * len(second.split()))
        if second:
            add(second.split(), entity, ["SECOND_NAME"] * len(second.split()))
        if city and name:
            add(city.split() + name.split(), entity,
                ["TEAM-CITY"] * len(city.split()) + ["TEAM-NAME"] * len(name.split()))
        if name:
            add(name.split(), entity, ["TEAM-NAME"] * len(name.split()))
        if city:
            add(city.split(), entity, ["TEAM-CITY"] * len(city.split()))
    return forms


def find_mentions(table: RecordTable, tokens: Sequence[str]) -> list[Mention]:
    """Greedy left-to-right longest-match entity spotting."""
    forms = _surface_forms(table)
    if not forms:
        return []
    longest = max(len(k) for k in forms)
    out = []
    i = 0
    while i < len(tokens):
        for size in range(min(longest, len(tokens) - i), 0, -1):
            entries = forms.get(tuple(tokens[i:i + size]))
            if entries:
                entity, types = entries[0]
                parts = []
                seen = set()
                for off, rtype in enumerate(types):
                    if rtype not in seen:
                        parts.append((i + off, rtype))
                        seen.add(rtype)
                out.append(Mention(i, i + size, entity, tuple(parts)))
                i += size
                break
        else:
            i += 1
    return out


def _is_num(tokens, i) -> bool:
    return 0 <= i < len(tokens) and normalize_number(tokens[i]) is not None


def _tok(tokens, i) -> str | None:
    return tokens[i] if 0 <= i < len(tokens) else None


def number_cue(tokens: Sequence[str], p: int) -> str | None:
    """Statistic suggested by the words around the number at position ``p``."""
    t = lambda k: _tok(tokens, p + k)  # noqa: E731
    if (t(1), t(2), t(3)) == ("-", "of", "-") and _is_num(tokens, p + 4):
        return "FGM"
    if (t(-3), t(-2), t(-1)) == ("-", "of", "-") and _is_num(tokens, p - 4):
        return "FGA"
    if t(1) == "-" and _is_num(tokens, p + 2) and t(3) == "FG":
        return "FGM"
    if t(-1) == "-" and _is_num(tokens, p - 2) and t(1) == "FG":
        return "FGA"
    if t(-1) == "(" and t(1) == "-" and _is_num(tokens, p + 2) and t(3) == ")":
        return "WINS"
    if t(1) == ")" and t(-1) == "-" and _is_num(tokens, p - 2) and t(-3) == "(":
        return "LOSSES"
    nxt = (t(1) or "").lower()
    if nxt in STAT_CUES:
        return STAT_CUES[nxt]
    if (t(1) == "-" and _is_num(tokens, p + 2)) or (t(-1) == "-" and _is_num(tokens, p - 2)):
        return "PTS"
    return None


def _base(rtype: str) -> str:
    return rtype[5:] if rtype.startswith("TEAM-") else rtype


def _is_team(table: RecordTable, entity: str) -> bool:
    return any(table[i].rtype.startswith("TEAM-") for i in table.positions(entity))


def extract_relations(table: RecordTable, summary: Summary) -> ExtractedRelations:
    """Rule-based relation spotting over entity-number pairs in each sentence.

    Name records come out at each entity's first mention. A number paired with
    no (entity, value) record in the table is treated as unrelated and dropped.
    When the surrounding words name a statistic that the matched entity does
    not have with that value, the relation keeps the cued type and is marked as
    unsupported (position None).
    """
    tokens = summary.tokens
    mentions = find_mentions(table, tokens)
    found: list[tuple[int, Relation, int | None]] = []
    introduced: set[str] = set()
    for m in mentions:
        if m.entity in introduced:
            continue
        introduced.add(m.entity)
        for pos, rtype in m.parts:
            idx = table.find(m.entity, rtype)
            if idx is not None:
                r = table[idx]
                found.append((pos, Relation(r.entity, r.value, r.rtype, r.side), idx))

    for a, b in summary.sentences():
        in_sentence = [m for m in mentions if a <= m.start < b]
        entities = list(dict.fromkeys(m.entity for m in in_sentence))
        for p in range(a, b):
            value = normalize_number(tokens[p])
            if value is None:
                continue
            cands = [i for e in entities for i in table.positions(e)
                     if table[i].value == value and table[i].rtype not in NAME_TYPES]
            if not cands:
                continue

            def distance(i):
                spans = [m for m in in_sentence if m.entity == table[i].entity]
                return min((0, p - m.end) if m.start < p else (1, m.start - p) for m in spans)

            cue = number_cue(tokens[a:b], p - a)
            typed = [i for i in cands if cue is None or _base(table[i].rtype) == cue]
            if typed:
                idx = min(typed, key=lambda i: (distance(i), i))
                r = table[idx]
                found.append((p, Relation(r.entity, r.value, r.rtype, r.side), idx))
            else:
                near = table[min(cands, key=lambda i: (distance(i), i))]
                rtype = ("TEAM-" + cue) if _is_team(table, near.entity) else cue
                found.append((p, Relation(near.entity, value, rtype, near.side), None))

    found.sort(key=lambda x: x[0])
    return ExtractedRelations(
        relations=[r for _, r, _ in found],
        positions=[i for _, _, i in found],
        token_positions=[p for p, _, _ in found],
    )


def extract_content_plan(table: RecordTable, summary: Summary) -> ContentPlan:
    rel = extract_relations(table, summary)
    return ContentPlan(tuple(i for i in rel.positions if i is not None)).validate(table)


def mark_copy_targets(summary: Summary, plan: ContentPlan, table: RecordTable) -> Summary:
    """Label each token with the earliest plan step it can be copied from.

    A step qualifies when its value equals the token and its entity is
    mentioned in the token's sentence.
    """
    mentions = find_mentions(table, summary.tokens)
    by_value: dict[str, list[int]] = {}
    for k, s in enumerate(plan.steps):
        by_value.setdefault(table[s].value, []).append(k)
    labels: list[CopyLabel | None] = [None] * len(summary.tokens)
    for a, b in summary.sentences():
        entities = {m.entity for m in mentions if a <= m.start < b}
        for t in range(a, b):
            for k in by_value.get(summary.tokens[t], ()):
                if table[plan.steps[k]].entity in entities:
                    labels[t] = CopyLabel(k)
                    break
    return Summary(summary.tokens, summary.sentence_starts, tuple(labels))


def relabel(example: DatasetExample) -> DatasetExample:
    """Re-derive plan and copy labels from the table and summary text."""
    plan = extract_content_plan(example.table, example.summary)
    return DatasetExample(example.table, mark_copy_targets(example.summary, plan, example.table), plan)


# -- files --------------------------------------------------------------------


def example_to_json(ex: DatasetExample) -> dict:
    labels = ex.summary.copy_labels
    return {
        "table": [r.to_list() for r in ex.table],
        "summary": {"tokens": list(ex.summary.tokens), "sentences": list(ex.summary.sentence_starts)},
        "plan": list(ex.plan.steps),
        "copy_labels": None if labels is None else [None if l is None else l.step for l in labels],
    }


def example_from_json(d: dict) -> DatasetExample:
    table = RecordTable(Record.from_list(r) for r in d["table"])
    labels = d.get("copy_labels")
    if labels is not None:
        labels = tuple(None if l is None else CopyLabel(int(l)) for l in labels)
    summary = Summary(tuple(d["summary"]["tokens"]), tuple(d["summary"]["sentences"]), labels)
    plan = ContentPlan(tuple(d["plan"])).validate(table)
    summary.check_labels(plan)
    return DatasetExample(table, summary, plan)


def save_dataset(path: str | Path, examples: Iterable[DatasetExample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(example_to_json(ex), separators=(",", ":")))
            f.write("\n")


def load_dataset(path: str | Path) -> list[DatasetExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(example_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed example: {exc}") from exc
    return out


def load_rotowire(path: str | Path) -> list[DatasetExample]:
    """Best-effort reader for RotoWire-style JSON (a list of game dicts).

    Players come from ``box_score`` columns (``PLAYER_NAME``, ``FIRST_NAME``,
    ``SECOND_NAME``, ``TEAM_CITY`` plus stat columns); teams from
    ``home_line`` / ``vis_line``. Player entities are names with underscores,
    team entities are team names. ``N/A`` cells are skipped. Plans and copy
    labels are re-extracted from ``summary``.
    """
    with open(path, encoding="utf-8") as f:
        games = json.load(f)
    out = []
    skip = {"PLAYER_NAME", "FIRST_NAME", "SECOND_NAME", "TEAM_CITY", "START_POSITION"}
    for g in games:
        records = []
        for line, side in ((g["home_line"], HOME), (g["vis_line"], VISITING)):
            team = line["TEAM-NAME"]
            for rtype, value in line.items():
                if value not in ("N/A", ""):
                    records.append(Record(rtype, team, str(value), side))
        box = g["box_score"]
        for key in box["PLAYER_NAME"]:
            name = box["PLAYER_NAME"][key]
            entity = name.replace(" ", "_")
            side = HOME if box["TEAM_CITY"][key] == g["home_city"] else VISITING
            for col in ("FIRST_NAME", "SECOND_NAME"):
                v = box.get(col, {}).get(key, "N/A")
                if v not in ("N/A", ""):
                    records.append(Record(col, entity, v, side))
            for col, cells in box.items():
                v = cells.get(key, "N/A")
                if col in skip or v in ("N/A", ""):
                    continue
                records.append(Record(col, entity, str(v), side))
        table = RecordTable(records)
        summary = Summary.from_tokens(g["summary"])
        out.append(relabel(DatasetExample(table, summary, ContentPlan(()))))
    return out
