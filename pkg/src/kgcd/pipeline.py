"""End-to-end retrieval pipeline: link -> extract -> trie -> score -> decode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .decoding import (
    DecodeConfig,
    NextTokenScorer,
    RetrievedSubgraph,
    beam_decode,
)
from .errors import NoRetrievableKnowledge, ParameterError
from .graph import KnowledgeGraph, k_hop_subgraph
from .informativeness import KATZ, build_table
from .linearize import FORWARD, reverse_path
from .linking import DialogHistory, MentionIndex, link_mentions
from .supervision import GoldAnnotation, resolve_gold_path, retrieval_target
from .tokenization import LinearizerConfig, make_tokenizer
from .trie import TrieConfig, build_trie


@dataclass(frozen=True)
class RunConfig:
    alpha: float = 0.8
    beta: float = 0.5
    katz_k: int = 2
    hops: int = 2
    beam: int = 5
    max_paths: int = 3
    slots: int = 2
    score: str = KATZ
    seed: int = 0
    strict_starts: bool = False
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.hops < 1:
            raise ParameterError(f"hops must be >= 1, got {self.hops}")
        if self.max_paths < 1:
            raise ParameterError(f"max-paths must be >= 1, got {self.max_paths}")


@dataclass
class DialogResult:
    retrieved: RetrievedSubgraph | None
    mentions: tuple[int, ...]

    def to_json_obj(self, pipeline: "Pipeline") -> dict:
        if self.retrieved is None:
            return {"paths": [], "tokens": [], "meta": {}}
        graph = pipeline.graph
        paths = []
        for scored in self.retrieved.paths:
            paths.append(
                {
                    "triplets": [
                        [
                            graph.entity_name(s.triplet.head),
                            graph.relation_name(s.triplet.relation),
                            graph.entity_name(s.triplet.tail),
                        ]
                        for s in scored.path.steps
                    ],
                    "orientation": [
                        "fwd" if s.orientation == FORWARD else "rev"
                        for s in scored.path.steps
                    ],
                    "logscore": scored.logscore,
                }
            )
        return {
            "paths": paths,
            "tokens": list(self.retrieved.tokens),
            "logscore": self.retrieved.logscore,
            "meta": dict(self.retrieved.meta),
        }


ScorerFactory = Callable[["Pipeline", DialogHistory], NextTokenScorer]


class Pipeline:
    """Shared immutable state for decoding a corpus against one graph."""

    def __init__(self, graph: KnowledgeGraph, cfg: RunConfig = RunConfig()) -> None:
        self.graph = graph
        self.cfg = cfg
        self.lin_cfg = LinearizerConfig(slots=cfg.slots)
        self.tok, self.sp = make_tokenizer(
            self.lin_cfg, graph.entity_names(), graph.relation_names()
        )
        self.mention_index = MentionIndex(graph)
        self.decode_cfg = DecodeConfig(
            alpha=cfg.alpha, beam=cfg.beam, epsilon=cfg.epsilon
        )
        self.trie_cfg = TrieConfig(
            max_hops=cfg.hops,
            max_paths=cfg.max_paths,
            strict_starts=cfg.strict_starts,
        )

    def intern_dialog(self, dialog: DialogHistory) -> list[int]:
        """Tokenize dialog text, growing the vocabulary (pre-freeze only)."""
        return self.tok.tokenize(dialog.full_text(), add=True)

    def freeze(self) -> None:
        self.tok.freeze()

    def gold_annotation(self, dialog: DialogHistory) -> GoldAnnotation:
        """Resolved gold paths, oriented to start at a mentioned entity.

        Surface gold triples do not pin down a traversal direction; the
        constraint automaton only emits paths anchored at mentions, so a
        resolved path is flipped when only its other end is mentioned.
        """
        mentioned = set(
            link_mentions(dialog, self.graph, self.mention_index).entity_ids()
        )
        paths = []
        for surface in dialog.gold_paths:
            path = resolve_gold_path(self.graph, surface)
            if path.start not in mentioned and reverse_path(path).start in mentioned:
                path = reverse_path(path)
            paths.append(path)
        return GoldAnnotation(paths=tuple(paths))

    def gold_target_tokens(self, dialog: DialogHistory) -> list[int]:
        """Gold linearization plus the end-of-retrieval token."""
        gold = self.gold_annotation(dialog)
        seq = retrieval_target(gold, self.graph, self.tok, self.sp)
        return seq.ids + [self.sp.end]

    def decode_dialog(
        self, dialog: DialogHistory, scorer: NextTokenScorer
    ) -> DialogResult:
        mentions = link_mentions(dialog, self.graph, self.mention_index)
        mention_ids = mentions.entity_ids()
        if not mention_ids:
            return DialogResult(retrieved=None, mentions=())
        sub = k_hop_subgraph(self.graph, mention_ids, self.cfg.hops)
        if not sub.triplets:
            return DialogResult(retrieved=None, mentions=mention_ids)
        try:
            trie = build_trie(sub, self.tok, self.sp, self.trie_cfg)
        except NoRetrievableKnowledge:
            return DialogResult(retrieved=None, mentions=mention_ids)
        table = build_table(
            sub,
            mention_ids,
            variant=self.cfg.score,
            beta=self.cfg.beta,
            max_len=self.cfg.katz_k,
        )
        context = self.tok.tokenize(dialog.full_text(), add=True)
        retrieved = beam_decode(scorer, trie, table, self.decode_cfg, context)
        return DialogResult(retrieved=retrieved, mentions=mention_ids)
