"""Lazy prefix automaton over valid linearizations of a candidate subgraph.

Nodes are materialized on first visit; every offered child is guaranteed to
reach an accepting state (a completable continuation exists), so a decoder
following allowed_tokens can never dead-end.  Sequences start with an
auto-emitted [Head] token (the decoder never chooses it), continue through
entity/relation spans and marker groups, and finish with the reserved
end-of-retrieval token after the last completed path.

Per-path constraints: at most L hops, no entity repeats within a path.
Per-sequence constraints: at most P paths, no duplicate path (exact step
list including orientation).  Later paths may start from mentioned
entities or entities of already-retrieved paths; strict mode restricts
starts to mentions only.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConstraintViolation, KgcdError, NoRetrievableKnowledge
from .graph import CandidateSubgraph, Triplet
from .linearize import FORWARD, REVERSE, KnowledgePath, PathStep
from .tokenization import INT, REV, SpecialTokens, TokenizerAdapter

StepKey = tuple[int, int, int, str]
PathKey = tuple[StepKey, ...]


@dataclass(frozen=True)
class TrieConfig:
    max_hops: int = 2  # L: steps per path
    max_paths: int = 3  # P: paths per sequence
    strict_starts: bool = False


@dataclass(frozen=True)
class TokenInfo:
    entity_start: bool = False
    entities: tuple[int, ...] = ()


# -- node states ------------------------------------------------------------


@dataclass(frozen=True)
class _PathStart:
    done: PathKey | tuple  # ordered keys of completed paths


@dataclass(frozen=True)
class _EntityCandidate:
    entity: int
    tokens: tuple[int, ...]
    step: PathStep | None  # None for a path-start entity


@dataclass(frozen=True)
class _EntitySpan:
    done: tuple
    steps: tuple[PathStep, ...]
    visited: frozenset[int]
    candidates: tuple[_EntityCandidate, ...]
    consumed: int


@dataclass(frozen=True)
class _RelationCandidate:
    relation: int
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class _RelationSpan:
    done: tuple
    steps: tuple[PathStep, ...]
    visited: frozenset[int]
    current: int
    orient: str  # FORWARD / REVERSE
    candidates: tuple[_RelationCandidate, ...]
    consumed: int


@dataclass(frozen=True)
class _Marker:
    done: tuple
    steps: tuple[PathStep, ...]
    visited: frozenset[int]
    current: int
    orient: str
    position: int  # 1 before the relation, 2 before the entity
    slot: int  # slots consumed so far
    relation: int | None = None  # set for position 2


@dataclass(frozen=True)
class _AfterTail:
    done: tuple


@dataclass(frozen=True)
class _Terminal:
    done: tuple


class _Node:
    __slots__ = ("state", "entry_tokens", "parent", "info", "_children", "_tokens")

    def __init__(self, state, entry_tokens: tuple[int, ...], parent, info: TokenInfo):
        self.state = state
        self.entry_tokens = entry_tokens
        self.parent = parent
        self.info = info
        self._children: dict[int, "_Node"] | None = None
        self._tokens: tuple[int, ...] | None = None

    @property
    def tokens(self) -> tuple[int, ...]:
        if self._tokens is None:
            prefix = self.parent.tokens if self.parent is not None else ()
            self._tokens = prefix + self.entry_tokens
        return self._tokens

    @property
    def accepting(self) -> bool:
        return isinstance(self.state, _Terminal)

    @property
    def path_complete(self) -> bool:
        return isinstance(self.state, (_AfterTail, _Terminal))


@dataclass(frozen=True)
class TrieCursor:
    """Position inside the automaton; session-private, cheap to copy."""

    node: _Node

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.node.tokens

    @property
    def accepting(self) -> bool:
        return self.node.accepting

    @property
    def path_complete(self) -> bool:
        return self.node.path_complete

    def completed_paths(self) -> list[KnowledgePath]:
        done = getattr(self.node.state, "done", ())
        return [key_to_path(key) for key in done]


def path_key(path: KnowledgePath) -> PathKey:
    return path.key()


def key_to_path(key: PathKey) -> KnowledgePath:
    return KnowledgePath(
        tuple(PathStep(Triplet(h, r, t), o) for (h, r, t, o) in key)
    )


class ConstraintTrie:
    """Prefix automaton over all valid linearizations of one candidate subgraph."""

    def __init__(
        self,
        sub: CandidateSubgraph,
        tok: TokenizerAdapter,
        sp: SpecialTokens,
        cfg: TrieConfig = TrieConfig(),
    ) -> None:
        if not sub.triplets:
            raise NoRetrievableKnowledge("candidate subgraph has no triplets")
        if not sub.mentions:
            raise KgcdError("candidate subgraph has no mentions")
        self.sub = sub
        self.graph = sub.graph
        self.tok = tok
        self.sp = sp
        self.cfg = cfg
        self._lock = threading.Lock()
        self._entity_tokens: dict[int, tuple[int, ...]] = {}
        self._relation_tokens: dict[int, tuple[int, ...]] = {}
        root_state = _PathStart(done=())
        if not self._viable_starts(root_state.done):
            raise NoRetrievableKnowledge("no retrievable knowledge for the mentions")
        self.root = _Node(root_state, (sp.head,), None, TokenInfo())

    # -- helpers ------------------------------------------------------------

    def _etoks(self, entity: int) -> tuple[int, ...]:
        toks = self._entity_tokens.get(entity)
        if toks is None:
            toks = tuple(self.tok.tokenize(self.graph.entity_name(entity), add=True))
            self._entity_tokens[entity] = toks
        return toks

    def _rtoks(self, relation: int) -> tuple[int, ...]:
        toks = self._relation_tokens.get(relation)
        if toks is None:
            toks = tuple(self.tok.tokenize(self.graph.relation_name(relation), add=True))
            self._relation_tokens[relation] = toks
        return toks

    def _extensions(
        self, current: int, visited: frozenset[int]
    ) -> list[tuple[int, int, str]]:
        """(relation, other endpoint, orientation) options out of `current`."""
        out = [
            (r, t, FORWARD)
            for r, t in self.sub.outgoing(current)
            if t not in visited
        ]
        out += [
            (r, h, REVERSE)
            for r, h in self.sub.incoming(current)
            if h not in visited
        ]
        return out

    @staticmethod
    def _step(current: int, relation: int, other: int, orient: str) -> PathStep:
        if orient == FORWARD:
            return PathStep(Triplet(current, relation, other), FORWARD)
        return PathStep(Triplet(other, relation, current), REVERSE)

    def _completable(
        self,
        steps: tuple[PathStep, ...],
        current: int,
        visited: frozenset[int],
        done_set: frozenset,
        hops_left: int,
    ) -> bool:
        """Can the in-progress path still finish as a non-duplicate path?"""
        if steps and tuple(s.key() for s in steps) not in done_set:
            return True
        if hops_left <= 0:
            return False
        for r, other, orient in self._extensions(current, visited):
            step = self._step(current, r, other, orient)
            if self._completable(
                steps + (step,), other, visited | {other}, done_set, hops_left - 1
            ):
                return True
        return False

    def _start_set(self, done: tuple) -> list[int]:
        starts = list(self.sub.mentions)
        if not self.cfg.strict_starts:
            seen = set(starts)
            for key in done:
                for h, _, t, _ in key:
                    for e in (h, t):
                        if e not in seen:
                            seen.add(e)
                            starts.append(e)
        return starts

    def _viable_starts(self, done: tuple) -> list[int]:
        done_set = frozenset(done)
        viable = []
        for s in self._start_set(done):
            if self._completable((), s, frozenset((s,)), done_set, self.cfg.max_hops):
                viable.append(s)
        return viable

    # -- expansion ----------------------------------------------------------

    def _children(self, node: _Node) -> dict[int, _Node]:
        if node._children is None:
            with self._lock:
                if node._children is None:
                    node._children = self._expand(node)
        return node._children

    def _expand(self, node: _Node) -> dict[int, _Node]:
        state = node.state
        if isinstance(state, _PathStart):
            return self._expand_path_start(node, state)
        if isinstance(state, _EntitySpan):
            return self._expand_entity_span(node, state)
        if isinstance(state, _RelationSpan):
            return self._expand_relation_span(node, state)
        if isinstance(state, _Marker):
            return self._expand_marker(node, state)
        if isinstance(state, _AfterTail):
            return self._expand_after_tail(node, state)
        return {}  # _Terminal

    def _entity_span_children(
        self,
        node: _Node,
        done: tuple,
        steps: tuple[PathStep, ...],
        visited: frozenset[int],
        candidates: Iterable[_EntityCandidate],
        consumed: int,
        entity_start: bool,
    ) -> dict[int, _Node]:
        children: dict[int, _Node] = {}
        by_token: dict[int, list[_EntityCandidate]] = {}
        for cand in candidates:
            if len(cand.tokens) == consumed:
                self._merge_after_entity(children, node, done, steps, visited, cand)
            else:
                by_token.setdefault(cand.tokens[consumed], []).append(cand)
        for token, group in by_token.items():
            info = TokenInfo(
                entity_start=entity_start,
                entities=tuple(c.entity for c in group) if entity_start else (),
            )
            children[token] = _Node(
                _EntitySpan(done, steps, visited, tuple(group), consumed + 1),
                (token,),
                node,
                info,
            )
        return children

    def _merge_after_entity(
        self,
        children: dict[int, _Node],
        node: _Node,
        done: tuple,
        steps: tuple[PathStep, ...],
        visited: frozenset[int],
        cand: _EntityCandidate,
    ) -> None:
        """Options once an entity span is fully consumed: [Tail] or a next hop."""
        if cand.step is not None:
            steps = steps + (cand.step,)
        current = cand.entity
        visited = visited | {current}
        done_set = frozenset(done)
        if steps and tuple(s.key() for s in steps) not in done_set:
            key = tuple(s.key() for s in steps)
            children[self.sp.tail] = _Node(
                _AfterTail(done + (key,)), (self.sp.tail,), node, TokenInfo()
            )
        if len(steps) < self.cfg.max_hops:
            hops_left = self.cfg.max_hops - len(steps) - 1
            for orient, kind in ((FORWARD, INT), (REVERSE, REV)):
                viable = any(
                    self._completable(
                        steps + (self._step(current, r, other, orient),),
                        other,
                        visited | {other},
                        done_set,
                        hops_left,
                    )
                    for r, other, o in self._extensions(current, visited)
                    if o == orient
                )
                if viable:
                    first = self.sp.marker(kind, 1)[0]
                    children[first] = _Node(
                        _Marker(done, steps, visited, current, orient, 1, 1),
                        (first,),
                        node,
                        TokenInfo(),
                    )

    def _expand_path_start(self, node: _Node, state: _PathStart) -> dict[int, _Node]:
        candidates = [
            _EntityCandidate(s, self._etoks(s), None)
            for s in self._viable_starts(state.done)
        ]
        return self._entity_span_children(
            node, state.done, (), frozenset(), candidates, 0, entity_start=True
        )

    def _expand_entity_span(self, node: _Node, state: _EntitySpan) -> dict[int, _Node]:
        return self._entity_span_children(
            node,
            state.done,
            state.steps,
            state.visited,
            state.candidates,
            state.consumed,
            entity_start=False,
        )

    def _expand_marker(self, node: _Node, state: _Marker) -> dict[int, _Node]:
        kind = INT if state.orient == FORWARD else REV
        slots = self.sp.marker(kind, state.position)
        if state.slot < len(slots):
            token = slots[state.slot]
            child = _Node(
                _Marker(
                    state.done,
                    state.steps,
                    state.visited,
                    state.current,
                    state.orient,
                    state.position,
                    state.slot + 1,
                    state.relation,
                ),
                (token,),
                node,
                TokenInfo(),
            )
            return {token: child}
        if state.position == 1:
            return self._relation_start_children(node, state)
        return self._hop_entity_children(node, state)

    def _relation_start_children(self, node: _Node, state: _Marker) -> dict[int, _Node]:
        done_set = frozenset(state.done)
        hops_left = self.cfg.max_hops - len(state.steps) - 1
        viable_rels: dict[int, bool] = {}
        for r, other, orient in self._extensions(state.current, state.visited):
            if orient != state.orient or viable_rels.get(r):
                continue
            step = self._step(state.current, r, other, orient)
            if self._completable(
                state.steps + (step,),
                other,
                state.visited | {other},
                done_set,
                hops_left,
            ):
                viable_rels[r] = True
        candidates = tuple(
            _RelationCandidate(r, self._rtoks(r)) for r in sorted(viable_rels)
        )
        return self._relation_span_children(
            node,
            _RelationSpan(
                state.done,
                state.steps,
                state.visited,
                state.current,
                state.orient,
                candidates,
                0,
            ),
        )

    def _relation_span_children(
        self, node: _Node, state: _RelationSpan
    ) -> dict[int, _Node]:
        children: dict[int, _Node] = {}
        by_token: dict[int, list[_RelationCandidate]] = {}
        for cand in state.candidates:
            if len(cand.tokens) == state.consumed:
                first = self.sp.marker(
                    INT if state.orient == FORWARD else REV, 2
                )[0]
                children[first] = _Node(
                    _Marker(
                        state.done,
                        state.steps,
                        state.visited,
                        state.current,
                        state.orient,
                        2,
                        1,
                        cand.relation,
                    ),
                    (first,),
                    node,
                    TokenInfo(),
                )
            else:
                by_token.setdefault(cand.tokens[state.consumed], []).append(cand)
        for token, group in by_token.items():
            children[token] = _Node(
                _RelationSpan(
                    state.done,
                    state.steps,
                    state.visited,
                    state.current,
                    state.orient,
                    tuple(group),
                    state.consumed + 1,
                ),
                (token,),
                node,
                TokenInfo(),
            )
        return children

    def _expand_relation_span(
        self, node: _Node, state: _RelationSpan
    ) -> dict[int, _Node]:
        return self._relation_span_children(node, state)

    def _hop_entity_children(self, node: _Node, state: _Marker) -> dict[int, _Node]:
        assert state.relation is not None
        done_set = frozenset(state.done)
        hops_left = self.cfg.max_hops - len(state.steps) - 1
        candidates = []
        for r, other, orient in self._extensions(state.current, state.visited):
            if orient != state.orient or r != state.relation:
                continue
            step = self._step(state.current, r, other, orient)
            if self._completable(
                state.steps + (step,),
                other,
                state.visited | {other},
                done_set,
                hops_left,
            ):
                candidates.append(_EntityCandidate(other, self._etoks(other), step))
        return self._entity_span_children(
            node,
            state.done,
            state.steps,
            state.visited,
            tuple(candidates),
            0,
            entity_start=True,
        )

    def _expand_after_tail(self, node: _Node, state: _AfterTail) -> dict[int, _Node]:
        children: dict[int, _Node] = {
            self.sp.end: _Node(_Terminal(state.done), (self.sp.end,), node, TokenInfo())
        }
        if len(state.done) < self.cfg.max_paths and self._viable_starts(state.done):
            children[self.sp.sep] = _Node(
                _PathStart(state.done),
                (self.sp.sep, self.sp.head),
                node,
                TokenInfo(),
            )
        return children

    # -- public API ---------------------------------------------------------

    def cursor(self) -> TrieCursor:
        return TrieCursor(self.root)

    def allowed_tokens(self, cursor: TrieCursor) -> dict[int, TokenInfo]:
        """Exact child set at the cursor with entity-start annotations."""
        children = self._children(cursor.node)
        return {token: child.info for token, child in children.items()}

    def advance(self, cursor: TrieCursor, token: int) -> TrieCursor:
        """Consume one token; structural tokens behind it ([Head]) come along."""
        children = self._children(cursor.node)
        child = children.get(token)
        if child is None:
            raise ConstraintViolation(token, len(cursor.tokens))
        return TrieCursor(child)

    def accepts(self, tokens: Sequence[int], require_end: bool = True) -> bool:
        """Does the automaton accept the full token sequence?

        Auto-emitted tokens ([Head] at path starts) must be present in the
        input, mirroring what linearize_subgraph produces.
        """
        cur = self.cursor()
        pos = 0
        tokens = list(tokens)
        while pos < len(tokens):
            consumed = cur.tokens
            # verify any auto-emitted suffix not yet matched
            if len(consumed) > pos:
                pending = consumed[pos:]
                if tuple(tokens[pos : pos + len(pending)]) != pending:
                    return False
                pos += len(pending)
                continue
            try:
                cur = self.advance(cur, tokens[pos])
            except ConstraintViolation:
                return False
        if len(cur.tokens) != len(tokens) or tuple(tokens) != cur.tokens:
            return False
        if require_end:
            return cur.accepting
        return cur.path_complete

    def to_dot(self) -> str:
        """DOT dump of the currently materialized nodes (debug aid)."""
        lines = ["digraph trie {"]
        counter = {id(self.root): 0}
        stack = [self.root]
        while stack:
            node = stack.pop()
            nid = counter[id(node)]
            label = type(node.state).__name__.lstrip("_")
            shape = "doublecircle" if node.accepting else "circle"
            lines.append(f'  n{nid} [label="{label}", shape={shape}];')
            for token, child in (node._children or {}).items():
                if id(child) not in counter:
                    counter[id(child)] = len(counter)
                    stack.append(child)
                cid = counter[id(child)]
                text = self.tok.token_text(token).replace('"', '\\"')
                lines.append(f'  n{nid} -> n{cid} [label="{text}"];')
        lines.append("}")
        return "\n".join(lines)


def build_trie(
    sub: CandidateSubgraph,
    tok: TokenizerAdapter,
    sp: SpecialTokens,
    cfg: TrieConfig = TrieConfig(),
) -> ConstraintTrie:
    return ConstraintTrie(sub, tok, sp, cfg)
