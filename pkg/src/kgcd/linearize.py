"""Structure-aware linearization of knowledge paths, and its inverse.

A path e1 -r1-> e2 -r2-> e3 renders as

    [Head] e1 M1 r1 M2 e2 M1 r2 M2 e3 [Tail]

where each marker M_p is m consecutive slot tokens, [Int] for a forward
step and [Rev] for a reverse-traversed one (the relation text itself is
never modified).  Disconnected paths are joined with single [SEP] tokens.
Marker position cycles with period 2: p=1 precedes a relation, p=2
precedes an entity, so arbitrarily long paths need only two markers per
orientation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from .errors import (
    KgcdError,
    ResolutionError,
    SequenceParseError,
    StructureError,
)
from .graph import KnowledgeGraph, Triplet
from .tokenization import INT, REV, SpecialTokens, TokenizerAdapter

FORWARD = "forward"
REVERSE = "reverse"

SPECIAL = "special"
ENTITY = "entity"
RELATION = "relation"


@dataclass(frozen=True)
class PathStep:
    triplet: Triplet
    orientation: str = FORWARD

    @property
    def source(self) -> int:
        return self.triplet.head if self.orientation == FORWARD else self.triplet.tail

    @property
    def target(self) -> int:
        return self.triplet.tail if self.orientation == FORWARD else self.triplet.head

    def key(self) -> tuple[int, int, int, str]:
        return (*self.triplet.as_tuple(), self.orientation)


@dataclass(frozen=True)
class KnowledgePath:
    steps: tuple[PathStep, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise StructureError("path must have at least one step")
        for a, b in zip(self.steps, self.steps[1:]):
            if a.target != b.source:
                raise StructureError(
                    f"broken chain: step target {a.target} != next source {b.source}"
                )

    @property
    def start(self) -> int:
        return self.steps[0].source

    def entities(self) -> tuple[int, ...]:
        return (self.start, *(s.target for s in self.steps))

    def triplets(self) -> tuple[Triplet, ...]:
        return tuple(s.triplet for s in self.steps)

    def key(self) -> tuple:
        return tuple(s.key() for s in self.steps)


def path_from_steps(steps: Sequence[tuple[Triplet, str]]) -> KnowledgePath:
    return KnowledgePath(tuple(PathStep(t, o) for t, o in steps))


def reverse_path(path: KnowledgePath) -> KnowledgePath:
    """The same chain walked from the other end (orientations flipped)."""
    flipped = tuple(
        PathStep(s.triplet, REVERSE if s.orientation == FORWARD else FORWARD)
        for s in reversed(path.steps)
    )
    return KnowledgePath(flipped)


@dataclass(frozen=True)
class Span:
    kind: str  # SPECIAL, ENTITY or RELATION
    start: int
    end: int  # exclusive
    ref: int | None = None  # EntityId / RelationId for non-special spans


@dataclass
class TokenSequence:
    ids: list[int]
    spans: list[Span] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def content_spans(self) -> list[Span]:
        return [s for s in self.spans if s.kind != SPECIAL]


class _Emitter:
    def __init__(self, graph: KnowledgeGraph, tok: TokenizerAdapter, sp: SpecialTokens):
        self.graph = graph
        self.tok = tok
        self.sp = sp
        self.ids: list[int] = []
        self.spans: list[Span] = []

    def special(self, ids: list[int] | int) -> None:
        if isinstance(ids, int):
            ids = [ids]
        start = len(self.ids)
        self.ids.extend(ids)
        self.spans.append(Span(SPECIAL, start, len(self.ids)))

    def text(self, kind: str, ref: int, surface: str) -> None:
        words = self.tok.tokenize(surface, add=True)
        if not words:
            raise StructureError(f"empty surface text for {kind} {ref}")
        start = len(self.ids)
        self.ids.extend(words)
        self.spans.append(Span(kind, start, len(self.ids), ref))

    def entity(self, entity: int) -> None:
        self.text(ENTITY, entity, self.graph.entity_name(entity))

    def relation(self, relation: int) -> None:
        self.text(RELATION, relation, self.graph.relation_name(relation))

    def path(self, path: KnowledgePath) -> None:
        self.special(self.sp.head)
        self.entity(path.start)
        for step in path.steps:
            kind = INT if step.orientation == FORWARD else REV
            self.special(self.sp.marker(kind, 1))
            self.relation(step.triplet.relation)
            self.special(self.sp.marker(kind, 2))
            self.entity(step.target)
        self.special(self.sp.tail)

    def sequence(self) -> TokenSequence:
        return TokenSequence(ids=self.ids, spans=self.spans)


def linearize_path(
    path: KnowledgePath,
    graph: KnowledgeGraph,
    tok: TokenizerAdapter,
    sp: SpecialTokens,
) -> TokenSequence:
    """Render one knowledge path as a token sequence with structural markers."""
    em = _Emitter(graph, tok, sp)
    em.path(path)
    return em.sequence()


def linearize_subgraph(
    paths: Sequence[KnowledgePath],
    graph: KnowledgeGraph,
    tok: TokenizerAdapter,
    sp: SpecialTokens,
) -> TokenSequence:
    """Render paths in the given order, joined with single [SEP] tokens."""
    em = _Emitter(graph, tok, sp)
    for i, path in enumerate(paths):
        if i:
            em.special(em.sp.sep)
        em.path(path)
    return em.sequence()


class _Parser:
    """Grammar parser for linearized sequences; inverse of the emitter."""

    def __init__(
        self,
        ids: Sequence[int],
        graph: KnowledgeGraph,
        tok: TokenizerAdapter,
        sp: SpecialTokens,
    ) -> None:
        self.ids = list(ids)
        self.graph = graph
        self.tok = tok
        self.sp = sp
        self.pos = 0

    def fail(self, message: str) -> SequenceParseError:
        return SequenceParseError(message, min(self.pos, len(self.ids)))

    def peek(self) -> int | None:
        return self.ids[self.pos] if self.pos < len(self.ids) else None

    def expect(self, token: int, what: str) -> None:
        if self.peek() != token:
            raise self.fail(f"expected {what}")
        self.pos += 1

    def read_words(self, what: str) -> str:
        start = self.pos
        while self.pos < len(self.ids) and not self.tok.is_special(self.ids[self.pos]):
            self.pos += 1
        if self.pos == start:
            raise self.fail(f"expected {what} text")
        return self.tok.detokenize(self.ids[start : self.pos])

    def read_entity(self) -> int:
        text = self.read_words("entity")
        entity = self.graph.find_entity(text)
        if entity is None:
            raise ResolutionError(f"unknown entity {text!r}")
        return entity

    def read_marker(self, position: int) -> str:
        """Consume one full marker group, returning its orientation kind."""
        first = self.peek()
        if first == self.sp.int_slots[position][0]:
            kind = INT
        elif first == self.sp.rev_slots[position][0]:
            kind = REV
        else:
            raise self.fail(f"expected marker at position {position}")
        for slot in self.sp.marker(kind, position):
            self.expect(slot, f"marker slot token {slot}")
        return kind

    def parse_path(self) -> KnowledgePath:
        self.expect(self.sp.head, "[Head]")
        current = self.read_entity()
        steps: list[PathStep] = []
        while True:
            nxt = self.peek()
            if nxt is None:
                raise self.fail("unterminated path")
            if nxt == self.sp.tail:
                self.pos += 1
                break
            kind = self.read_marker(1)
            rel_text = self.read_words("relation")
            relation = self.graph.find_relation(rel_text)
            if relation is None:
                raise ResolutionError(f"unknown relation {rel_text!r}")
            kind2 = self.read_marker(2)
            if kind2 != kind:
                raise self.fail("marker orientation mismatch within step")
            target = self.read_entity()
            if kind == INT:
                triplet = Triplet(current, relation, target)
                orientation = FORWARD
            else:
                triplet = Triplet(target, relation, current)
                orientation = REVERSE
            if not self.graph.has_triplet(*triplet.as_tuple()):
                raise ResolutionError(
                    "no such triplet: "
                    f"({self.graph.entity_name(triplet.head)!r}, "
                    f"{self.graph.relation_name(triplet.relation)!r}, "
                    f"{self.graph.entity_name(triplet.tail)!r})"
                )
            steps.append(PathStep(triplet, orientation))
            current = target
        if not steps:
            raise self.fail("path has no steps")
        return KnowledgePath(tuple(steps))

    def parse(self) -> list[KnowledgePath]:
        paths = [self.parse_path()]
        while self.pos < len(self.ids):
            nxt = self.peek()
            if nxt == self.sp.end and self.pos == len(self.ids) - 1:
                self.pos += 1
                break
            self.expect(self.sp.sep, "[SEP] or end of sequence")
            paths.append(self.parse_path())
        return paths


def delinearize(
    seq: TokenSequence | Sequence[int],
    graph: KnowledgeGraph,
    tok: TokenizerAdapter,
    sp: SpecialTokens,
) -> list[KnowledgePath]:
    """Parse a linearized sequence back into knowledge paths.

    Reverse markers restore the original triplet orientation.  An empty
    sequence yields an empty path list; a trailing [End] token is accepted.
    """
    ids = seq.ids if isinstance(seq, TokenSequence) else list(seq)
    if not ids:
        return []
    return _Parser(ids, graph, tok, sp).parse()


HEAD_ENTITY = "head-entity"
TAIL_ENTITY = "tail-entity"
INTERMEDIATE_ENTITY = "intermediate-entity"
RELATION_SPAN = "relation"


@dataclass(frozen=True)
class MaskedExample:
    input: TokenSequence
    target: TokenSequence
    masked: str  # HEAD_ENTITY / RELATION_SPAN / TAIL_ENTITY / INTERMEDIATE_ENTITY


def _span_kinds(seq: TokenSequence, sp: SpecialTokens) -> list[tuple[Span, str]]:
    """Maskable spans with their per-path role labels."""
    out: list[tuple[Span, str]] = []
    for i, span in enumerate(seq.spans):
        if span.kind == RELATION:
            out.append((span, RELATION_SPAN))
        elif span.kind == ENTITY:
            prev = seq.spans[i - 1] if i > 0 else None
            nxt = seq.spans[i + 1] if i + 1 < len(seq.spans) else None
            if prev and prev.kind == SPECIAL and seq.ids[prev.start] == sp.head:
                out.append((span, HEAD_ENTITY))
            elif nxt and nxt.kind == SPECIAL and seq.ids[nxt.start] == sp.tail:
                out.append((span, TAIL_ENTITY))
            else:
                out.append((span, INTERMEDIATE_ENTITY))
    return out


def mask_for_reconstruction(
    seq: TokenSequence, sp: SpecialTokens, rng: random.Random
) -> MaskedExample:
    """Replace one uniformly chosen entity or relation span with [Mask].

    Selection is span-level: each maskable span is equally likely regardless
    of its token length.
    """
    candidates = _span_kinds(seq, sp)
    if not candidates:
        raise KgcdError("sequence has no maskable span")
    span, kind = candidates[rng.randrange(len(candidates))]
    masked_ids = seq.ids[: span.start] + [sp.mask] + seq.ids[span.end :]
    shift = span.end - span.start - 1
    masked_spans: list[Span] = []
    for s in seq.spans:
        if s is span:
            masked_spans.append(Span(SPECIAL, s.start, s.start + 1))
        elif s.start < span.start:
            masked_spans.append(s)
        else:
            masked_spans.append(Span(s.kind, s.start - shift, s.end - shift, s.ref))
    return MaskedExample(
        input=TokenSequence(ids=masked_ids, spans=masked_spans),
        target=seq,
        masked=kind,
    )


def sample_paths(
    graph: KnowledgeGraph, k: int, count: int, rng: random.Random
) -> list[KnowledgePath]:
    """Seeded uniform random walks of length <= k over the undirected view.

    Start entities are drawn uniformly from entities with incident edges;
    the target length uniformly from 1..k.  A walk stops early when no
    unvisited neighbor remains (entities never repeat within a walk).
    """
    if k < 1:
        raise KgcdError(f"k must be >= 1, got {k}")
    starts = [
        e
        for e in range(graph.num_entities)
        if graph.forward[e] or graph.reverse[e]
    ]
    if not starts:
        raise KgcdError("graph has no edges")
    paths = []
    for _ in range(count):
        current = starts[rng.randrange(len(starts))]
        target_len = rng.randint(1, k)
        visited = {current}
        steps: list[PathStep] = []
        for _ in range(target_len):
            options = [
                (Triplet(current, r, t), FORWARD)
                for r, t in graph.forward[current]
                if t not in visited
            ] + [
                (Triplet(h, r, current), REVERSE)
                for r, h in graph.reverse[current]
                if h not in visited
            ]
            if not options:
                break
            triplet, orientation = options[rng.randrange(len(options))]
            steps.append(PathStep(triplet, orientation))
            current = steps[-1].target
            visited.add(current)
        if steps:
            paths.append(KnowledgePath(tuple(steps)))
    return paths
