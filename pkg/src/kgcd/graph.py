"""Knowledge graph storage: vocabularies, adjacency indexing, k-hop extraction.

Graphs are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import io
import json
from collections import deque
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, TextIO, Union

from .errors import GraphLookupError, KgcdError, TripletParseError

OUTGOING = "outgoing"
INCOMING = "incoming"
BOTH = "both"


def canonicalize(name: str) -> str:
    """Trim and collapse internal whitespace, preserving case for display."""
    return " ".join(name.split())


def canonical_key(name: str) -> str:
    return canonicalize(name).casefold()


@dataclass(frozen=True)
class Triplet:
    head: int
    relation: int
    tail: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.head, self.relation, self.tail)


@dataclass(frozen=True)
class Neighbor:
    relation: int
    entity: int
    direction: str  # OUTGOING or INCOMING


class _Vocab:
    """Dense first-seen-order ids with case-insensitive canonical lookup."""

    def __init__(self) -> None:
        self.names: list[str] = []
        self._by_key: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.names)

    def intern(self, name: str) -> int:
        key = canonical_key(name)
        idx = self._by_key.get(key)
        if idx is None:
            idx = len(self.names)
            self.names.append(canonicalize(name))
            self._by_key[key] = idx
        return idx

    def get(self, name: str) -> int | None:
        return self._by_key.get(canonical_key(name))


class KnowledgeGraph:
    """Entity/relation vocabularies plus a deduplicated triplet set.

    Forward adjacency maps head -> [(relation, tail)], reverse adjacency is
    its exact transpose; both are sorted by (relation id, entity id).
    """

    def __init__(self) -> None:
        self._entities = _Vocab()
        self._relations = _Vocab()
        self.triplets: list[Triplet] = []
        self._triplet_set: set[tuple[int, int, int]] = set()
        self.forward: list[list[tuple[int, int]]] = []
        self.reverse: list[list[tuple[int, int]]] = []

    # -- vocab access -------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_relations(self) -> int:
        return len(self._relations)

    def entity_name(self, entity: int) -> str:
        self._check_entity(entity)
        return self._entities.names[entity]

    def relation_name(self, relation: int) -> str:
        if not 0 <= relation < len(self._relations):
            raise GraphLookupError(f"unknown relation id {relation}")
        return self._relations.names[relation]

    def entity_id(self, name: str) -> int:
        idx = self._entities.get(name)
        if idx is None:
            raise GraphLookupError(f"unknown entity {name!r}")
        return idx

    def relation_id(self, name: str) -> int:
        idx = self._relations.get(name)
        if idx is None:
            raise GraphLookupError(f"unknown relation {name!r}")
        return idx

    def find_entity(self, name: str) -> int | None:
        return self._entities.get(name)

    def find_relation(self, name: str) -> int | None:
        return self._relations.get(name)

    def entity_names(self) -> list[str]:
        return list(self._entities.names)

    def relation_names(self) -> list[str]:
        return list(self._relations.names)

    # -- construction -------------------------------------------------------

    def _add_triplet(self, head: str, relation: str, tail: str) -> None:
        h = self._entities.intern(head)
        t = self._entities.intern(tail)
        r = self._relations.intern(relation)
        while len(self.forward) < len(self._entities):
            self.forward.append([])
            self.reverse.append([])
        key = (h, r, t)
        if key in self._triplet_set:
            return
        self._triplet_set.add(key)
        self.triplets.append(Triplet(h, r, t))
        self.forward[h].append((r, t))
        self.reverse[t].append((r, h))

    def _finalize(self) -> None:
        for adj in self.forward:
            adj.sort()
        for adj in self.reverse:
            adj.sort()

    # -- queries ------------------------------------------------------------

    def _check_entity(self, entity: int) -> None:
        if not 0 <= entity < len(self._entities):
            raise GraphLookupError(f"unknown entity id {entity}")

    def has_triplet(self, head: int, relation: int, tail: int) -> bool:
        return (head, relation, tail) in self._triplet_set

    def neighbors(self, entity: int, direction: str = BOTH) -> list[Neighbor]:
        """Incident edges of an entity in deterministic (relation, entity) order."""
        self._check_entity(entity)
        out: list[Neighbor] = []
        if direction in (OUTGOING, BOTH):
            out.extend(Neighbor(r, t, OUTGOING) for r, t in self.forward[entity])
        if direction in (INCOMING, BOTH):
            out.extend(Neighbor(r, h, INCOMING) for r, h in self.reverse[entity])
        if direction not in (OUTGOING, INCOMING, BOTH):
            raise KgcdError(f"bad direction {direction!r}")
        out.sort(key=lambda n: (n.relation, n.entity, n.direction))
        return out

    def undirected_edge_count(self, a: int, b: int) -> int:
        """Edges joining a and b in the undirected view, counting multi-edges."""
        self._check_entity(a)
        self._check_entity(b)
        count = sum(1 for _, t in self.forward[a] if t == b)
        if a != b:
            count += sum(1 for _, t in self.forward[b] if t == a)
        return count

    def stats(self) -> dict[str, int]:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "triplets": len(self.triplets),
        }

    def stats_json(self) -> str:
        return json.dumps(self.stats())


@dataclass
class CandidateSubgraph:
    """k-hop ball around the mentioned entities, with per-entity hop distances."""

    graph: KnowledgeGraph
    triplets: list[Triplet]
    hop_distance: dict[int, int]
    mentions: tuple[int, ...]
    k: int
    _triplet_set: set[tuple[int, int, int]] = field(init=False)
    forward: dict[int, list[tuple[int, int]]] = field(init=False)
    reverse: dict[int, list[tuple[int, int]]] = field(init=False)

    def __post_init__(self) -> None:
        self._triplet_set = {t.as_tuple() for t in self.triplets}
        self.forward = {}
        self.reverse = {}
        for t in self.triplets:
            self.forward.setdefault(t.head, []).append((t.relation, t.tail))
            self.reverse.setdefault(t.tail, []).append((t.relation, t.head))
        for adj in self.forward.values():
            adj.sort()
        for adj in self.reverse.values():
            adj.sort()

    @property
    def entities(self) -> set[int]:
        ents: set[int] = set()
        for t in self.triplets:
            ents.add(t.head)
            ents.add(t.tail)
        ents.update(self.mentions)
        return ents

    def has_triplet(self, head: int, relation: int, tail: int) -> bool:
        return (head, relation, tail) in self._triplet_set

    def outgoing(self, entity: int) -> list[tuple[int, int]]:
        return self.forward.get(entity, [])

    def incoming(self, entity: int) -> list[tuple[int, int]]:
        return self.reverse.get(entity, [])


Source = Union[str, bytes, BinaryIO, TextIO]


def _iter_lines(source: Source) -> Iterable[str]:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    if isinstance(source, str):
        with open(source, "rb") as fh:
            yield from io.TextIOWrapper(fh, encoding="utf-8")
        return
    if isinstance(source, io.TextIOBase):
        yield from source
        return
    yield from io.TextIOWrapper(source, encoding="utf-8")


def load_triplets(source: Source, format: str = "tsv") -> KnowledgeGraph:
    """Load a `head<TAB>relation<TAB>tail` stream into an indexed graph.

    Rows are deduplicated; vocabulary ids follow first-seen order, so two
    loads of the same stream produce identical graphs.
    """
    if format != "tsv":
        raise KgcdError(f"unsupported format {format!r}")
    graph = KnowledgeGraph()
    for lineno, line in enumerate(_iter_lines(source), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TripletParseError(
                f"expected 3 tab-separated fields, got {len(fields)}", lineno
            )
        head, relation, tail = (canonicalize(f) for f in fields)
        if not head or not relation or not tail:
            raise TripletParseError("empty field", lineno)
        graph._add_triplet(head, relation, tail)
    graph._finalize()
    return graph


def k_hop_subgraph(
    graph: KnowledgeGraph, mentions: Iterable[int], k: int
) -> CandidateSubgraph:
    """Extract the k-hop candidate subgraph around the mentioned entities.

    BFS runs over the undirected view from all mentions simultaneously.  A
    triplet is kept when both endpoints lie within the k-hop ball and at
    least one endpoint is within k-1 hops.
    """
    mention_ids = tuple(dict.fromkeys(mentions))
    if not mention_ids:
        raise KgcdError("no mentioned entities")
    if k < 1:
        raise KgcdError(f"k must be >= 1, got {k}")
    for m in mention_ids:
        graph._check_entity(m)

    dist: dict[int, int] = {m: 0 for m in mention_ids}
    frontier = deque(mention_ids)
    while frontier:
        e = frontier.popleft()
        d = dist[e]
        if d >= k:
            continue
        for nb in (t for _, t in graph.forward[e]):
            if nb not in dist:
                dist[nb] = d + 1
                frontier.append(nb)
        for nb in (h for _, h in graph.reverse[e]):
            if nb not in dist:
                dist[nb] = d + 1
                frontier.append(nb)

    kept = [
        t
        for t in graph.triplets
        if t.head in dist
        and t.tail in dist
        and min(dist[t.head], dist[t.tail]) <= k - 1
    ]
    used = {e for t in kept for e in (t.head, t.tail)}
    used.update(mention_ids)
    return CandidateSubgraph(
        graph=graph,
        triplets=kept,
        hop_distance={e: d for e, d in dist.items() if e in used},
        mentions=mention_ids,
        k=k,
    )
