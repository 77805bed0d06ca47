"""Supervision targets, sequence NLL evaluation, and retrieval metrics.

Gradient training is out of scope: these helpers make the training
quantities measurable for any plugged-in scorer and score retrieval
quality against gold paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decoding import NextTokenScorer, RetrievedSubgraph
from .errors import KgcdError, ResolutionError
from .graph import KnowledgeGraph, Triplet
from .linearize import (
    FORWARD,
    REVERSE,
    KnowledgePath,
    PathStep,
    TokenSequence,
    linearize_subgraph,
)
from .tokenization import SpecialTokens, TokenizerAdapter


def resolve_gold_path(
    graph: KnowledgeGraph, triples: Sequence[tuple[str, str, str]]
) -> KnowledgePath:
    """Resolve surface triples against the graph into a chained path.

    Each triple may be traversed forward or reverse; the orientation is
    inferred from the chaining with its neighbors (first step defaults to
    forward when either fits).
    """
    if not triples:
        raise ResolutionError("empty gold path")
    resolved: list[Triplet] = []
    for h, r, t in triples:
        head = graph.find_entity(h)
        tail = graph.find_entity(t)
        relation = graph.find_relation(r)
        if head is None or tail is None or relation is None:
            missing = h if head is None else (r if relation is None else t)
            raise ResolutionError(f"gold element {missing!r} not in graph")
        if not graph.has_triplet(head, relation, tail):
            raise ResolutionError(f"gold triplet ({h!r}, {r!r}, {t!r}) not in graph")
        resolved.append(Triplet(head, relation, tail))

    def chain(first_orient: str) -> KnowledgePath:
        steps = [PathStep(resolved[0], first_orient)]
        current = steps[0].target
        for i, triplet in enumerate(resolved[1:], start=1):
            if current == triplet.head:
                steps.append(PathStep(triplet, FORWARD))
            elif current == triplet.tail:
                steps.append(PathStep(triplet, REVERSE))
            else:
                h, r, t = triples[i]
                raise ResolutionError(
                    f"gold path breaks at triplet ({h!r}, {r!r}, {t!r})"
                )
            current = steps[-1].target
        return KnowledgePath(tuple(steps))

    # the first step's orientation is only pinned down by its successor
    try:
        return chain(FORWARD)
    except ResolutionError:
        if len(resolved) == 1:
            raise
        return chain(REVERSE)


@dataclass(frozen=True)
class GoldAnnotation:
    paths: tuple[KnowledgePath, ...]
    response_tokens: tuple[int, ...] = ()


def retrieval_target(
    gold: GoldAnnotation,
    graph: KnowledgeGraph,
    tok: TokenizerAdapter,
    sp: SpecialTokens,
) -> TokenSequence:
    """The exact sequence a trained retriever should emit for this dialog."""
    return linearize_subgraph(list(gold.paths), graph, tok, sp)


def generation_input(
    retrieved: RetrievedSubgraph | TokenSequence | Sequence[int],
    dialog_tokens: Sequence[int],
) -> list[int]:
    """Concatenate linearized subgraph tokens with the dialog tokens."""
    if isinstance(retrieved, RetrievedSubgraph):
        prefix = list(retrieved.tokens)
    elif isinstance(retrieved, TokenSequence):
        prefix = list(retrieved.ids)
    else:
        prefix = list(retrieved)
    return prefix + list(dialog_tokens)


def sequence_nll(
    scorer: NextTokenScorer,
    target: Sequence[int],
    context: Sequence[int] = (),
) -> float:
    """-sum_j log p(target_j | context, target_<j) under the scorer."""
    ctx = list(context)
    total = 0.0
    for j, token in enumerate(target):
        logprobs = np.asarray(scorer.log_probs(ctx), dtype=float)
        value = float(logprobs[token])
        if not np.isfinite(value):
            raise KgcdError(f"non-finite log-prob for target token at index {j}")
        total -= value
        ctx.append(token)
    return total


def _triplet_key(path: KnowledgePath) -> tuple:
    return tuple(s.triplet.as_tuple() for s in path.steps)


def _entity_key(path: KnowledgePath) -> tuple:
    return path.entities()


def paths_match(
    candidate: KnowledgePath, gold: KnowledgePath, entity_level: bool = False
) -> bool:
    """Orientation-insensitive match: the reverse traversal also counts."""
    keyfn = _entity_key if entity_level else _triplet_key
    ck, gk = keyfn(candidate), keyfn(gold)
    return ck == gk or tuple(reversed(ck)) == gk


def path_at_k(
    ranked: Sequence[KnowledgePath],
    gold: Sequence[KnowledgePath],
    k: int,
    entity_level: bool = False,
) -> int:
    """1 iff any gold path appears within the top-k ranked paths."""
    if k < 1:
        raise KgcdError(f"k must be >= 1, got {k}")
    for candidate in ranked[:k]:
        for g in gold:
            if paths_match(candidate, g, entity_level=entity_level):
                return 1
    return 0


@dataclass(frozen=True)
class EvalReport:
    path_at_1: float
    path_at_3: float
    n: int
    skipped: int
    mean_nll: float
    per_dialog: tuple[dict, ...] = ()

    def to_json(self) -> str:
        return json.dumps(
            {
                "path@1": self.path_at_1,
                "path@3": self.path_at_3,
                "n": self.n,
                "skipped": self.skipped,
                "mean_nll": self.mean_nll,
            }
        )


SurfacePath = tuple[tuple[str, str, str], ...]


def surface_path(triples: Sequence[Sequence[str]]) -> SurfacePath:
    """Canonicalized surface form of a triplet list, for graph-free matching."""
    from .graph import canonical_key

    return tuple(
        (canonical_key(h), canonical_key(r), canonical_key(t)) for h, r, t in triples
    )


def surface_paths_match(candidate: SurfacePath, gold: SurfacePath) -> bool:
    return candidate == gold or tuple(reversed(candidate)) == gold


def surface_path_at_k(
    ranked: Sequence[SurfacePath], gold: Sequence[SurfacePath], k: int
) -> int:
    if k < 1:
        raise KgcdError(f"k must be >= 1, got {k}")
    return int(
        any(
            surface_paths_match(c, g) for c in ranked[:k] for g in gold
        )
    )


def evaluate_corpus(
    retrieved: Sequence[Sequence[KnowledgePath]],
    gold: Sequence[Sequence[KnowledgePath]],
    nlls: Sequence[float] | None = None,
    entity_level: bool = False,
) -> EvalReport:
    """Corpus path@k over dialogs that carry gold paths; others are skipped."""
    if len(retrieved) != len(gold):
        raise KgcdError("retrieved/gold corpus length mismatch")
    hits1 = hits3 = n = skipped = 0
    nll_sum = 0.0
    nll_count = 0
    per_dialog = []
    for i, (paths, gold_paths) in enumerate(zip(retrieved, gold)):
        if not gold_paths:
            skipped += 1
            per_dialog.append({"dialog": i, "skipped": True})
            continue
        h1 = path_at_k(paths, gold_paths, 1, entity_level=entity_level)
        h3 = path_at_k(paths, gold_paths, 3, entity_level=entity_level)
        hits1 += h1
        hits3 += h3
        n += 1
        entry = {"dialog": i, "path@1": h1, "path@3": h3}
        if nlls is not None:
            entry["nll"] = nlls[i]
            nll_sum += nlls[i]
            nll_count += 1
        per_dialog.append(entry)
    return EvalReport(
        path_at_1=hits1 / n if n else 0.0,
        path_at_3=hits3 / n if n else 0.0,
        n=n,
        skipped=skipped,
        mean_nll=nll_sum / nll_count if nll_count else 0.0,
        per_dialog=tuple(per_dialog),
    )


def evaluate_surface_corpus(
    retrieved: Sequence[Sequence[SurfacePath]],
    gold: Sequence[Sequence[SurfacePath]],
    nlls: Sequence[float] | None = None,
) -> EvalReport:
    """Graph-free variant of evaluate_corpus over canonical surface triples."""
    if len(retrieved) != len(gold):
        raise KgcdError("retrieved/gold corpus length mismatch")
    hits1 = hits3 = n = skipped = 0
    nll_sum = 0.0
    nll_count = 0
    per_dialog = []
    for i, (paths, gold_paths) in enumerate(zip(retrieved, gold)):
        if not gold_paths:
            skipped += 1
            per_dialog.append({"dialog": i, "skipped": True})
            continue
        h1 = surface_path_at_k(paths, gold_paths, 1)
        h3 = surface_path_at_k(paths, gold_paths, 3)
        hits1 += h1
        hits3 += h3
        n += 1
        entry = {"dialog": i, "path@1": h1, "path@3": h3}
        if nlls is not None:
            entry["nll"] = nlls[i]
            nll_sum += nlls[i]
            nll_count += 1
        per_dialog.append(entry)
    return EvalReport(
        path_at_1=hits1 / n if n else 0.0,
        path_at_3=hits3 / n if n else 0.0,
        n=n,
        skipped=skipped,
        mean_nll=nll_sum / nll_count if nll_count else 0.0,
        per_dialog=tuple(per_dialog),
    )
