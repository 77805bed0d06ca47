"""Dictionary-based entity mention linking over dialog histories.

Pure functions over immutable inputs; matching is exact-string,
case-insensitive, longest-match at word boundaries.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable

from .graph import KnowledgeGraph, canonical_key


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str


@dataclass(frozen=True)
class DialogHistory:
    turns: tuple[Turn, ...]
    gold_paths: tuple[tuple[tuple[str, str, str], ...], ...] = ()

    def full_text(self) -> str:
        return "\n".join(t.text for t in self.turns)

    @staticmethod
    def from_json(obj: dict) -> "DialogHistory":
        turns = tuple(
            Turn(speaker=t.get("speaker", ""), text=t["text"]) for t in obj["turns"]
        )
        gold = tuple(
            tuple(tuple(trip) for trip in path) for path in obj.get("gold_paths", [])
        )
        return DialogHistory(turns=turns, gold_paths=gold)

    @staticmethod
    def from_jsonl_line(line: str) -> "DialogHistory":
        return DialogHistory.from_json(json.loads(line))


@dataclass(frozen=True)
class Mention:
    entity: int
    turn: int
    start: int
    end: int


@dataclass(frozen=True)
class MentionSet:
    mentions: tuple[Mention, ...]

    def entity_ids(self) -> tuple[int, ...]:
        return tuple(dict.fromkeys(m.entity for m in self.mentions))

    def __bool__(self) -> bool:
        return bool(self.mentions)


class MentionIndex:
    """Compiled longest-match scanner over the graph's entity surface names.

    Build once per graph; the alternation is ordered by descending name
    length (then lower entity id) so the regex engine yields the longest
    candidate at each position.
    """

    def __init__(self, graph: KnowledgeGraph) -> None:
        self.graph = graph
        names = [(canonical_key(n), i) for i, n in enumerate(graph.entity_names())]
        names.sort(key=lambda p: (-len(p[0]), p[1]))
        self._by_key = {key: idx for key, idx in reversed(names)}
        if names:
            alternation = "|".join(re.escape(key) for key, _ in names)
            self._pattern = re.compile(
                r"(?<!\w)(?:" + alternation + r")(?!\w)", re.IGNORECASE
            )
        else:
            self._pattern = None

    def scan_turn(self, turn_index: int, text: str) -> list[Mention]:
        if self._pattern is None:
            return []
        found = []
        for m in self._pattern.finditer(text):
            entity = self._by_key[canonical_key(m.group(0))]
            found.append(Mention(entity, turn_index, m.start(), m.end()))
        return found


def link_mentions(
    dialog: DialogHistory,
    graph: KnowledgeGraph,
    index: MentionIndex | None = None,
) -> MentionSet:
    """Find graph entities mentioned in the dialog history.

    Deduplicates by entity id across turns, keeping the earliest span.  An
    empty result is valid: the caller decides whether retrieval proceeds.
    """
    if index is None:
        index = MentionIndex(graph)
    seen: dict[int, Mention] = {}
    for ti, turn in enumerate(dialog.turns):
        for mention in index.scan_turn(ti, turn.text):
            if mention.entity not in seen:
                seen[mention.entity] = mention
    return MentionSet(mentions=tuple(seen.values()))


def link_texts(texts: Iterable[str], graph: KnowledgeGraph) -> MentionSet:
    dialog = DialogHistory(turns=tuple(Turn("", t) for t in texts))
    return link_mentions(dialog, graph)
