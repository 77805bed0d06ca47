"""Gold resolution, supervision targets, NLL, and retrieval metrics."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from kgcd.decoding import PlantedScorer, UniformScorer
from kgcd.errors import KgcdError, ResolutionError
from kgcd.graph import Triplet
from kgcd.linearize import FORWARD, REVERSE, KnowledgePath, PathStep
from kgcd.supervision import (
    EvalReport,
    GoldAnnotation,
    evaluate_corpus,
    evaluate_surface_corpus,
    generation_input,
    path_at_k,
    paths_match,
    resolve_gold_path,
    retrieval_target,
    sequence_nll,
    surface_path,
    surface_paths_match,
)

from .conftest import graph_from_rows, tokenizer_for


def test_resolve_forward_chain(chain_graph):
    path = resolve_gold_path(chain_graph, [("a", "r_ab", "b"), ("b", "r_bc", "c")])
    assert [s.orientation for s in path.steps] == [FORWARD, FORWARD]
    assert path.entities() == (0, 1, 2)


def test_resolve_infers_reverse(chain_graph):
    # written tail-first: the chain only closes if both steps reverse
    path = resolve_gold_path(chain_graph, [("b", "r_bc", "c"), ("a", "r_ab", "b")])
    assert [s.orientation for s in path.steps] == [REVERSE, REVERSE]
    assert path.entities() == (2, 1, 0)
    # starting triple reversed relative to the chain
    path2 = resolve_gold_path(chain_graph, [("a", "r_ab", "b"), ("a", "r_ab", "b")])
    assert path2.steps[1].orientation == REVERSE


def test_resolve_errors(chain_graph):
    with pytest.raises(ResolutionError):
        resolve_gold_path(chain_graph, [])
    with pytest.raises(ResolutionError):
        resolve_gold_path(chain_graph, [("a", "r_ab", "zz")])
    with pytest.raises(ResolutionError):
        resolve_gold_path(chain_graph, [("b", "r_ab", "a")])  # wrong direction
    with pytest.raises(ResolutionError):
        resolve_gold_path(
            chain_graph, [("a", "r_ab", "b"), ("b", "r_bc", "c"), ("a", "r_ab", "b")]
        )  # chain breaks at c


def test_retrieval_target_and_generation_input(chain_graph):
    g = chain_graph
    tok, sp = tokenizer_for(g)
    gold = GoldAnnotation(
        paths=(resolve_gold_path(g, [("a", "r_ab", "b")]),)
    )
    target = retrieval_target(gold, g, tok, sp)
    assert target.ids[0] == sp.head and target.ids[-1] == sp.tail
    dialog = tok.tokenize("a b hello", add=True)
    joined = generation_input(target, dialog)
    assert joined == target.ids + dialog
    assert generation_input(target.ids, dialog) == joined


def test_sequence_nll_arithmetic():
    scorer = UniformScorer(8)
    assert sequence_nll(scorer, [0, 1, 2]) == pytest.approx(3 * math.log(8))
    planted = PlantedScorer([3, 1], 8)
    expected = -math.log(0.99) * 2
    assert sequence_nll(planted, [3, 1]) == pytest.approx(expected)


def test_sequence_nll_rejects_zero_mass():
    class Spiky:
        vocab_size = 2
        thread_safe = True

        def log_probs(self, context):
            return np.array([0.0, -np.inf])

    with pytest.raises(KgcdError):
        sequence_nll(Spiky(), [1])


def _p(*steps):
    return KnowledgePath(tuple(PathStep(Triplet(*t), o) for t, o in steps))


def test_paths_match_orientation_insensitive():
    fwd = _p(((0, 0, 1), FORWARD), ((1, 1, 2), FORWARD))
    # same triplets walked from the other end
    rev = _p(((1, 1, 2), REVERSE), ((0, 0, 1), REVERSE))
    assert paths_match(rev, fwd)
    assert paths_match(fwd, fwd)
    other = _p(((0, 0, 1), FORWARD))
    assert not paths_match(other, fwd)


def test_paths_match_entity_level():
    a = _p(((0, 0, 1), FORWARD))
    b = _p(((0, 5, 1), FORWARD))  # different relation, same endpoints
    assert not paths_match(a, b)
    assert paths_match(a, b, entity_level=True)


def test_path_at_k():
    gold = [_p(((0, 0, 1), FORWARD))]
    miss = _p(((1, 1, 2), FORWARD))
    ranked = [miss, gold[0]]
    assert path_at_k(ranked, gold, 1) == 0
    assert path_at_k(ranked, gold, 3) == 1
    with pytest.raises(KgcdError):
        path_at_k(ranked, gold, 0)


def test_evaluate_corpus_skips_unannotated():
    g1 = [_p(((0, 0, 1), FORWARD))]
    report = evaluate_corpus(
        retrieved=[[g1[0]], [g1[0]], []],
        gold=[g1, [], g1],
        nlls=[1.0, 2.0, 3.0],
    )
    assert report.n == 2 and report.skipped == 1
    assert report.path_at_1 == pytest.approx(0.5)
    assert report.path_at_3 == pytest.approx(0.5)
    assert report.mean_nll == pytest.approx(2.0)
    obj = json.loads(report.to_json())
    assert set(obj) == {"path@1", "path@3", "n", "skipped", "mean_nll"}
    with pytest.raises(KgcdError):
        evaluate_corpus([[]], [])


def test_surface_matching():
    a = surface_path([("A", "r", "B"), ("B", "s", "C")])
    rev = surface_path([("b", "s", "c"), ("a", "r", "b")])
    assert surface_paths_match(rev, a)
    assert not surface_paths_match(surface_path([("a", "r", "b")]), a)
    report = evaluate_surface_corpus([[a]], [[a]], nlls=[0.5])
    assert report.path_at_1 == 1.0 and report.mean_nll == 0.5


def test_eval_report_empty_corpus():
    report = evaluate_corpus([], [])
    assert report.n == 0 and report.path_at_1 == 0.0
    assert isinstance(report, EvalReport)
