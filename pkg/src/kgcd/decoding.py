"""Graph-constrained beam decoding with mixed vocabulary/graph scores.

Per step, the scorer's log-probabilities are restricted to the trie-allowed
tokens and renormalized.  At entity-start positions a graph term derived
from the informativeness table is blended in:

    mixed = alpha * log p_vocab + (1 - alpha) * log p_graph

with p_graph proportional to max(score(entity), epsilon) over the
entity-start candidates of that step.  Elsewhere the renormalized
p_vocab stands alone.  Beam accumulation uses the softmax-renormalized
mixed scores, so per-step values are proper log-probabilities.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .errors import DeadEndError, KgcdError, ParameterError, ScorerError
from .informativeness import InformativenessTable
from .linearize import KnowledgePath
from .tokenization import SpecialTokens
from .trie import ConstraintTrie, TokenInfo, TrieCursor

EQUAL_SCORE_RTOL = 1e-12


@runtime_checkable
class NextTokenScorer(Protocol):
    """Injected next-token model: context ids -> log-probs over the vocabulary."""

    vocab_size: int
    thread_safe: bool

    def log_probs(self, context: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class DecodeConfig:
    alpha: float = 0.8
    beam: int = 5
    epsilon: float = 1e-6
    max_steps: int = 10_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beam < 1:
            raise ParameterError(f"beam must be >= 1, got {self.beam}")
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class StepScores:
    """Raw mixed scores and their softmax-renormalized (proper) version."""

    mixed: dict[int, float]
    log_probs: dict[int, float]


def mixed_step(
    scorer_logprobs: np.ndarray,
    allowed: Mapping[int, TokenInfo],
    table: InformativenessTable | None,
    alpha: float,
    epsilon: float = 1e-6,
) -> StepScores:
    """Blend renormalized vocabulary log-probs with the graph term.

    When every entity-start candidate carries the same informativeness
    score the graph term is dropped and ranking follows p_vocab alone.
    """
    if not allowed:
        raise DeadEndError("empty allowed set")
    tokens = sorted(allowed)
    lp = np.array([scorer_logprobs[t] for t in tokens], dtype=float)
    norm = logsumexp(lp)
    if not np.isfinite(norm):
        raise KgcdError("scorer assigned zero mass to every allowed token")
    lp_vocab = lp - norm

    mixed = dict(zip(tokens, lp_vocab))
    starts = [t for t in tokens if allowed[t].entity_start]
    if starts and table is not None and alpha < 1.0:
        weights = {}
        for t in starts:
            entities = allowed[t].entities
            weights[t] = max(
                (max(table.score(e), epsilon) for e in entities), default=epsilon
            )
        values = list(weights.values())
        all_equal = all(
            math.isclose(v, values[0], rel_tol=EQUAL_SCORE_RTOL) for v in values
        )
        if not all_equal:
            total = sum(weights.values())
            for t in starts:
                lpg = math.log(weights[t] / total)
                mixed[t] = alpha * mixed[t] + (1.0 - alpha) * lpg

    values = np.array([mixed[t] for t in tokens])
    renorm = logsumexp(values)
    log_probs = {t: mixed[t] - renorm for t in tokens}
    return StepScores(mixed=mixed, log_probs=log_probs)


@dataclass(frozen=True)
class ScoredPath:
    path: KnowledgePath
    logscore: float


@dataclass(frozen=True)
class RetrievedSubgraph:
    paths: tuple[ScoredPath, ...]
    tokens: tuple[int, ...]
    logscore: float
    meta: dict = field(default_factory=dict)

    def knowledge_paths(self) -> list[KnowledgePath]:
        return [p.path for p in self.paths]


@dataclass(frozen=True)
class _Hyp:
    cursor: TrieCursor
    score: float
    path_scores: tuple[float, ...]
    current: float
    n_complete: int


def beam_decode(
    scorer: NextTokenScorer,
    trie: ConstraintTrie,
    table: InformativenessTable | None,
    cfg: DecodeConfig,
    context_tokens: Sequence[int],
) -> RetrievedSubgraph:
    """Beam search over the constraint automaton.

    The scorer sees the dialog context plus every token generated so far,
    so later paths condition on earlier retrieved ones.  Deterministic:
    score ties break on lower token id, then shorter prefix.
    """
    context = list(context_tokens)
    start = _Hyp(trie.cursor(), 0.0, (), 0.0, 0)
    active = [start]
    finished: list[_Hyp] = []

    for step_index in range(cfg.max_steps):
        if not active:
            break
        if finished:
            best_done = max(h.score for h in finished)
            if all(h.score <= best_done for h in active):
                break
        candidates: list[tuple[float, int, int, _Hyp, TrieCursor]] = []
        for hyp in active:
            ctx = context + list(hyp.cursor.tokens)
            try:
                logprobs = scorer.log_probs(ctx)
            except Exception as exc:  # propagate with the decode step index
                raise ScorerError(str(exc), step_index) from exc
            allowed = trie.allowed_tokens(hyp.cursor)
            if not allowed:
                raise DeadEndError(
                    f"no allowed tokens at step {step_index} (trie bug)"
                )
            scores = mixed_step(logprobs, allowed, table, cfg.alpha, cfg.epsilon)
            for token, contrib in scores.log_probs.items():
                candidates.append(
                    (hyp.score + contrib, token, len(hyp.cursor.tokens), hyp, trie.advance(hyp.cursor, token))
                )
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        active = []
        for score, token, _, hyp, cursor in candidates[: cfg.beam]:
            contrib = score - hyp.score
            n_complete = len(
                getattr(cursor.node.state, "done", ())
            ) if cursor.path_complete else hyp.n_complete
            if cursor.path_complete and n_complete > hyp.n_complete:
                new = _Hyp(
                    cursor,
                    score,
                    hyp.path_scores + (hyp.current + contrib,),
                    0.0,
                    n_complete,
                )
            else:
                new = _Hyp(cursor, score, hyp.path_scores, hyp.current + contrib, hyp.n_complete)
            if cursor.accepting:
                finished.append(new)
            else:
                active.append(new)
    if not finished and not active:
        return RetrievedSubgraph(paths=(), tokens=(), logscore=0.0)
    if not finished:
        raise KgcdError("decode exceeded max_steps without finishing")

    finished.sort(key=lambda h: (-h.score, h.cursor.tokens))
    best = finished[0]
    paths = best.cursor.completed_paths()
    scored = tuple(
        ScoredPath(path, best.path_scores[i] if i < len(best.path_scores) else 0.0)
        for i, path in enumerate(paths)
    )
    return RetrievedSubgraph(
        paths=scored,
        tokens=best.cursor.tokens,
        logscore=best.score,
        meta={"renormalization": "softmax over trie-allowed tokens, pre- and post-mix"},
    )


# -- mock scorers -----------------------------------------------------------


class UniformScorer:
    """Equal log-probability over the whole vocabulary."""

    thread_safe = True

    def __init__(self, vocab_size: int) -> None:
        if vocab_size < 1:
            raise ParameterError("vocab_size must be >= 1")
        self.vocab_size = vocab_size
        self._row = np.full(vocab_size, -math.log(vocab_size))

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        return self._row


class PlantedScorer:
    """Puts 0.99 mass on the next token of a planted gold sequence.

    The next gold token is located by the longest prefix of the gold
    sequence that is a suffix of the context; off the gold track the
    distribution is uniform.
    """

    thread_safe = True

    def __init__(self, gold: Sequence[int], vocab_size: int) -> None:
        if not gold:
            raise ParameterError("planted sequence must be non-empty")
        self.gold = tuple(gold)
        self.vocab_size = vocab_size
        self._uniform = np.full(vocab_size, -math.log(vocab_size))

    def _next_gold(self, context: Sequence[int]) -> int | None:
        ctx = tuple(context)
        for n in range(min(len(self.gold), len(ctx)), -1, -1):
            if n == 0 or ctx[-n:] == self.gold[:n]:
                return self.gold[n] if n < len(self.gold) else None
        return None

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        target = self._next_gold(context)
        if target is None:
            return self._uniform
        rest = 0.01 / max(self.vocab_size - 1, 1)
        row = np.full(self.vocab_size, math.log(rest))
        row[target] = math.log(0.99)
        return row


class BigramScorer:
    """Add-one-smoothed bigram model over a token corpus."""

    thread_safe = True

    def __init__(self, corpus: Sequence[Sequence[int]], vocab_size: int) -> None:
        sequences = [list(seq) for seq in corpus if len(seq) > 0]
        if not sequences:
            raise ParameterError("empty corpus for the bigram scorer")
        self.vocab_size = vocab_size
        self._pairs: dict[int, Counter] = {}
        self._totals: Counter = Counter()
        for seq in sequences:
            for prev, nxt in zip(seq, seq[1:]):
                self._pairs.setdefault(prev, Counter())[nxt] += 1
                self._totals[prev] += 1
        self._cache: dict[int, np.ndarray] = {}

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        prev = context[-1] if len(context) else -1
        row = self._cache.get(prev)
        if row is None:
            total = self._totals.get(prev, 0)
            row = np.full(self.vocab_size, -math.log(total + self.vocab_size))
            for nxt, count in self._pairs.get(prev, {}).items():
                row[nxt] = math.log((count + 1) / (total + self.vocab_size))
            self._cache[prev] = row
        return row


def make_mock_scorer(kind: str, **kwargs) -> NextTokenScorer:
    """Factory for the bundled test scorers: uniform, planted, ngram."""
    if kind == "uniform":
        return UniformScorer(kwargs["vocab_size"])
    if kind == "planted":
        return PlantedScorer(kwargs["path"], kwargs["vocab_size"])
    if kind == "ngram":
        return BigramScorer(kwargs["corpus"], kwargs["vocab_size"])
    raise ParameterError(f"unknown scorer kind {kind!r}")


class CallbackScorer:
    """Wraps a host callback (context -> dense log-prob array) as a scorer.

    Enforces the length contract on every call; after the first failure no
    further callbacks are issued.
    """

    def __init__(
        self,
        callback: Callable[[list[int]], Sequence[float]],
        vocab_size: int,
        thread_safe: bool = False,
    ) -> None:
        self._callback = callback
        self.vocab_size = vocab_size
        self.thread_safe = thread_safe
        self._failed = False

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        if self._failed:
            raise ScorerError("scorer disabled after a previous failure", -1)
        try:
            values = self._callback(list(context))
        except Exception:
            self._failed = True
            raise
        row = np.asarray(values, dtype=float)
        if row.shape != (self.vocab_size,):
            self._failed = True
            raise KgcdError(
                f"callback returned {row.shape[0] if row.ndim == 1 else row.shape} "
                f"values, declared vocabulary size is {self.vocab_size}"
            )
        return row


def free_decode(
    scorer: NextTokenScorer,
    sp: SpecialTokens,
    max_length: int,
    rng: np.random.Generator,
) -> list[int]:
    """Unconstrained sampling control: no trie, full-vocabulary sampling.

    Demonstrates why the constraint matters; outputs rarely parse.
    """
    tokens: list[int] = []
    for _ in range(max_length):
        logprobs = np.asarray(scorer.log_probs(tokens), dtype=float)
        probs = np.exp(logprobs - logsumexp(logprobs))
        probs = probs / probs.sum()
        token = int(rng.choice(len(probs), p=probs))
        if token == sp.end:
            break
        tokens.append(token)
    return tokens
