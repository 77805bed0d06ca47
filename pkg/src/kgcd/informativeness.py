"""Entity informativeness: connection counts and the decayed-walk (Katz) index.

Scores measure graph-structural proximity of each entity to the mention
set, averaged over mentions.  The Katz variant sums beta^k times the number
of length-k walks (backtracking included) up to a maximum length K,
computed with sparse matrix-vector products; the dense power of the
adjacency matrix is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

from .errors import KgcdError, ParameterError
from .graph import CandidateSubgraph, KnowledgeGraph

CONNECTION = "connection"
KATZ = "katz"


@dataclass(frozen=True)
class InformativenessTable:
    """Immutable per-entity score table for a fixed mention set."""

    mentions: tuple[int, ...]
    scores: Mapping[int, float]
    variant: str
    beta: float
    max_len: int

    def score(self, entity: int) -> float:
        return self.scores.get(entity, 0.0)


def connection_score(graph: KnowledgeGraph, e_i: int, e_m: int) -> int:
    """Number of edges directly joining the two entities (undirected view)."""
    return graph.undirected_edge_count(e_i, e_m)


def _undirected_matrix(
    source: KnowledgeGraph | CandidateSubgraph, directed: bool
) -> tuple[sparse.csr_matrix, list[int], dict[int, int]]:
    """Adjacency over the source's entities with multi-edge multiplicity."""
    if isinstance(source, CandidateSubgraph):
        entities = sorted(source.entities)
        triplets = source.triplets
    else:
        entities = list(range(source.num_entities))
        triplets = source.triplets
    index = {e: i for i, e in enumerate(entities)}
    rows: list[int] = []
    cols: list[int] = []
    for t in triplets:
        h, c = index[t.head], index[t.tail]
        rows.append(h)
        cols.append(c)
        if not directed and h != c:
            rows.append(c)
            cols.append(h)
    n = len(entities)
    mat = sparse.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, n)
    ).tocsr()
    return mat, entities, index


def katz_table(
    source: KnowledgeGraph | CandidateSubgraph,
    mentions: Iterable[int],
    beta: float = 0.5,
    max_len: int = 2,
    directed: bool = False,
) -> InformativenessTable:
    """Decayed-walk proximity of every entity to the mention set.

    score(e) = (1/|M|) * sum_m sum_{k=1..K} beta^k (A^k)_{e,m}, evaluated
    as K sparse matrix-vector products against the mention indicator.
    """
    mention_ids = tuple(dict.fromkeys(mentions))
    if not mention_ids:
        raise KgcdError("empty mention set")
    if beta <= 0:
        raise ParameterError(f"beta must be > 0, got {beta}")
    if not 1 <= max_len <= 4:
        raise ParameterError(f"max walk length must be in 1..4, got {max_len}")

    mat, entities, index = _undirected_matrix(source, directed)
    indicator = np.zeros(len(entities))
    for m in mention_ids:
        if m not in index:
            raise KgcdError(f"mention {m} not in scored graph")
        indicator[index[m]] += 1.0
    walk = indicator
    total = np.zeros_like(indicator)
    for k in range(1, max_len + 1):
        walk = mat @ walk
        total += (beta**k) * walk
    total /= len(mention_ids)
    scores = {e: float(total[i]) for e, i in index.items()}
    return InformativenessTable(
        mentions=mention_ids,
        scores=scores,
        variant=KATZ,
        beta=beta,
        max_len=max_len,
    )


def connection_table(
    source: KnowledgeGraph | CandidateSubgraph, mentions: Iterable[int]
) -> InformativenessTable:
    """Mean direct-connection count to the mention set (K=1, unit weight)."""
    table = katz_table(source, mentions, beta=1.0, max_len=1)
    return InformativenessTable(
        mentions=table.mentions,
        scores=table.scores,
        variant=CONNECTION,
        beta=1.0,
        max_len=1,
    )


def build_table(
    source: KnowledgeGraph | CandidateSubgraph,
    mentions: Iterable[int],
    variant: str = KATZ,
    beta: float = 0.5,
    max_len: int = 2,
) -> InformativenessTable:
    if variant == KATZ:
        return katz_table(source, mentions, beta=beta, max_len=max_len)
    if variant == CONNECTION:
        return connection_table(source, mentions)
    raise ParameterError(f"unknown score variant {variant!r}")


def informativeness(table: InformativenessTable, entity: int) -> float:
    """Table lookup; entities outside the scored graph have score 0."""
    return table.score(entity)
