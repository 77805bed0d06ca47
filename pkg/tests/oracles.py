"""Independent brute-force reference implementations used by the tests.

These deliberately avoid the library's incremental data structures:
walk counting is explicit enumeration, and the valid-sequence language is
produced by enumerating path lists and linearizing them.
"""

from __future__ import annotations

from kgcd.graph import CandidateSubgraph, KnowledgeGraph, Triplet
from kgcd.linearize import (
    FORWARD,
    REVERSE,
    KnowledgePath,
    PathStep,
    linearize_subgraph,
)


def katz_oracle(
    source: KnowledgeGraph | CandidateSubgraph,
    mentions: list[int],
    beta: float,
    max_len: int,
) -> dict[int, float]:
    """score(e) = mean over mentions of sum_k beta^k * #walks(e -> m, length k).

    Walks are counted on the undirected multigraph view by explicit
    enumeration; a self-loop contributes one step choice at its node.
    """
    if isinstance(source, CandidateSubgraph):
        entities = sorted(source.entities)
        triplets = source.triplets
    else:
        entities = list(range(source.num_entities))
        triplets = source.triplets
    neigh: dict[int, list[int]] = {e: [] for e in entities}
    for t in triplets:
        neigh[t.head].append(t.tail)
        if t.head != t.tail:
            neigh[t.tail].append(t.head)

    memo: dict[tuple[int, int, int], int] = {}

    def count_walks(frm: int, to: int, length: int) -> int:
        if length == 0:
            return 1 if frm == to else 0
        key = (frm, to, length)
        if key not in memo:
            memo[key] = sum(count_walks(nb, to, length - 1) for nb in neigh[frm])
        return memo[key]

    scores = {}
    for e in entities:
        total = 0.0
        for m in mentions:
            for k in range(1, max_len + 1):
                total += (beta**k) * count_walks(e, m, k)
        scores[e] = total / len(mentions)
    return scores


def _sub_paths_from(
    sub: CandidateSubgraph, start: int, max_hops: int
) -> list[KnowledgePath]:
    """All simple paths (1..max_hops steps) of the subgraph starting at `start`."""
    out: list[KnowledgePath] = []

    def extend(current: int, visited: set[int], steps: tuple[PathStep, ...]) -> None:
        if steps:
            out.append(KnowledgePath(steps))
        if len(steps) >= max_hops:
            return
        options = [
            (PathStep(Triplet(current, r, t), FORWARD), t)
            for r, t in sub.outgoing(current)
            if t not in visited
        ] + [
            (PathStep(Triplet(h, r, current), REVERSE), h)
            for r, h in sub.incoming(current)
            if h not in visited
        ]
        for step, nxt in options:
            extend(nxt, visited | {nxt}, steps + (step,))

    extend(start, {start}, ())
    return out


def language_oracle(sub: CandidateSubgraph, tok, sp, cfg) -> set[tuple[int, ...]]:
    """Every token sequence a correct decoder may emit, as full-id tuples.

    Enumerates ordered lists of distinct paths obeying the start, hop, path
    and duplicate rules, then renders each with the production linearizer
    plus the end-of-retrieval token.
    """
    sequences: set[tuple[int, ...]] = set()

    def starts_for(done: list[KnowledgePath]) -> list[int]:
        starts = list(dict.fromkeys(sub.mentions))
        if not cfg.strict_starts:
            for p in done:
                for e in p.entities():
                    if e not in starts:
                        starts.append(e)
        return starts

    def emit(done: list[KnowledgePath]) -> None:
        seq = linearize_subgraph(done, sub.graph, tok, sp)
        sequences.add(tuple(seq.ids) + (sp.end,))

    def recurse(done: list[KnowledgePath], keys: set) -> None:
        if len(done) >= cfg.max_paths:
            return
        for start in starts_for(done):
            for path in _sub_paths_from(sub, start, cfg.max_hops):
                key = path.key()
                if key in keys:
                    continue
                emit(done + [path])
                recurse(done + [path], keys | {key})

    recurse([], set())
    return sequences


def trie_language(trie) -> set[tuple[int, ...]]:
    """Exhaustive DFS over the automaton, collecting accepting sequences."""
    out: set[tuple[int, ...]] = set()
    stack = [trie.cursor()]
    while stack:
        cur = stack.pop()
        if cur.accepting:
            out.add(cur.tokens)
            continue
        for token in trie.allowed_tokens(cur):
            stack.append(trie.advance(cur, token))
    return out
