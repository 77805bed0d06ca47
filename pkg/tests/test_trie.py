"""Constraint automaton: language correctness, dead-end freedom, limits."""

from __future__ import annotations

import random

import pytest

from kgcd.errors import ConstraintViolation, NoRetrievableKnowledge
from kgcd.graph import CandidateSubgraph, k_hop_subgraph
from kgcd.trie import TrieConfig, build_trie

from .conftest import graph_from_rows, random_graph, tokenizer_for
from .oracles import language_oracle, trie_language


def _sub_for(graph, mentions, k=2):
    return k_hop_subgraph(graph, mentions, k)


def test_root_offers_only_mention_entity_starts(chain_graph):
    g = chain_graph
    tok, sp = tokenizer_for(g)
    trie = build_trie(_sub_for(g, [g.entity_id("a")]), tok, sp, TrieConfig())
    allowed = trie.allowed_tokens(trie.cursor())
    assert set(allowed) == set(tok.tokenize("a", add=False))
    info = next(iter(allowed.values()))
    assert info.entity_start and info.entities == (g.entity_id("a"),)
    # [Head] is auto-emitted, never offered
    assert sp.head not in allowed
    assert trie.cursor().tokens == (sp.head,)


def test_advance_rejects_disallowed(chain_graph):
    g = chain_graph
    tok, sp = tokenizer_for(g)
    trie = build_trie(_sub_for(g, [g.entity_id("a")]), tok, sp)
    with pytest.raises(ConstraintViolation) as exc:
        trie.advance(trie.cursor(), sp.end)
    assert exc.value.token == sp.end


def test_no_retrievable_knowledge():
    g = graph_from_rows([("a", "r", "b"), ("c", "r", "d")])
    tok, sp = tokenizer_for(g)
    sub = CandidateSubgraph(
        graph=g, triplets=[], hop_distance={}, mentions=(g.entity_id("a"),), k=2
    )
    with pytest.raises(NoRetrievableKnowledge):
        build_trie(sub, tok, sp)
    # mention isolated from every kept triplet
    isolated = CandidateSubgraph(
        graph=g,
        triplets=[g.triplets[0]],  # (a, r, b)
        hop_distance={},
        mentions=(g.entity_id("c"),),
        k=2,
    )
    with pytest.raises(NoRetrievableKnowledge):
        build_trie(isolated, tok, sp)


def test_language_matches_oracle_small():
    rng = random.Random(17)
    checked = 0
    while checked < 40:
        g = random_graph(rng, rng.randint(2, 6), rng.randint(1, 6))
        mention = rng.randrange(g.num_entities)
        sub = _sub_for(g, [mention], k=2)
        if not sub.triplets:
            continue
        tok, sp = tokenizer_for(g, slots=rng.choice((1, 2)))
        cfg = TrieConfig(max_hops=2, max_paths=2, strict_starts=rng.random() < 0.3)
        try:
            trie = build_trie(sub, tok, sp, cfg)
        except NoRetrievableKnowledge:
            assert not language_oracle(sub, tok, sp, cfg)
            checked += 1
            continue
        assert trie_language(trie) == language_oracle(sub, tok, sp, cfg)
        checked += 1


def test_accepts_agrees_with_language(chain_graph):
    g = chain_graph
    tok, sp = tokenizer_for(g)
    sub = _sub_for(g, [g.entity_id("a")])
    cfg = TrieConfig(max_hops=2, max_paths=2)
    trie = build_trie(sub, tok, sp, cfg)
    language = trie_language(trie)
    for seq in language:
        assert trie.accepts(seq)
        assert not trie.accepts(seq[:-1])  # missing [End]
        assert trie.accepts(seq[:-1], require_end=False)
    assert not trie.accepts((sp.head,))
    assert not trie.accepts((sp.end,))


def test_random_walks_never_dead_end():
    rng = random.Random(23)
    for _ in range(30):
        g = random_graph(rng, rng.randint(3, 10), rng.randint(2, 20))
        mention = rng.randrange(g.num_entities)
        sub = _sub_for(g, [mention], k=2)
        if not sub.triplets:
            continue
        tok, sp = tokenizer_for(g)
        try:
            trie = build_trie(sub, tok, sp, TrieConfig(max_hops=2, max_paths=3))
        except NoRetrievableKnowledge:
            continue
        for _ in range(5):
            cur = trie.cursor()
            for _ in range(400):
                if cur.accepting:
                    break
                allowed = sorted(trie.allowed_tokens(cur))
                assert allowed, "live node offered no continuation"
                cur = trie.advance(cur, allowed[rng.randrange(len(allowed))])
            assert cur.accepting


def test_hop_and_path_limits(chain_graph):
    g = chain_graph
    tok, sp = tokenizer_for(g)
    sub = _sub_for(g, [g.entity_id("a")])
    delin_targets = trie_language(build_trie(sub, tok, sp, TrieConfig(max_hops=1, max_paths=1)))
    from kgcd.linearize import delinearize

    for seq in delin_targets:
        paths = delinearize(list(seq), g, tok, sp)
        assert len(paths) == 1
        assert len(paths[0].steps) == 1
    many = trie_language(build_trie(sub, tok, sp, TrieConfig(max_hops=2, max_paths=2)))
    assert any(len(delinearize(list(s), g, tok, sp)) == 2 for s in many)
    # every accepted sequence has distinct path keys
    for seq in many:
        paths = delinearize(list(seq), g, tok, sp)
        keys = [p.key() for p in paths]
        assert len(keys) == len(set(keys))


def test_entity_acyclic_within_path():
    g = graph_from_rows([("a", "r", "b"), ("b", "r", "a"), ("b", "r", "c")])
    tok, sp = tokenizer_for(g)
    sub = _sub_for(g, [g.entity_id("a")])
    trie = build_trie(sub, tok, sp, TrieConfig(max_hops=3, max_paths=1))
    from kgcd.linearize import delinearize

    for seq in trie_language(trie):
        for path in delinearize(list(seq), g, tok, sp):
            ents = path.entities()
            assert len(set(ents)) == len(ents)


def test_strict_starts_restricts_later_paths():
    g = graph_from_rows([("a", "r", "b"), ("b", "r", "c")])
    tok, sp = tokenizer_for(g)
    sub = _sub_for(g, [g.entity_id("a")], k=2)
    from kgcd.linearize import delinearize

    loose = trie_language(build_trie(sub, tok, sp, TrieConfig(max_hops=1, max_paths=2)))
    strict = trie_language(
        build_trie(sub, tok, sp, TrieConfig(max_hops=1, max_paths=2, strict_starts=True))
    )
    assert strict < loose
    for seq in strict:
        for path in delinearize(list(seq), g, tok, sp):
            assert path.start == g.entity_id("a")


def test_shared_first_token_entities_grouped():
    g = graph_from_rows([("m", "r", "x one"), ("m", "r", "x two")])
    tok, sp = tokenizer_for(g)
    sub = _sub_for(g, [g.entity_id("m")])
    trie = build_trie(sub, tok, sp, TrieConfig(max_hops=1, max_paths=1))
    cur = trie.cursor()
    cur = trie.advance(cur, tok.tokenize("m", add=False)[0])
    cur = trie.advance(cur, sp.int_slots[1][0])
    cur = trie.advance(cur, tok.tokenize("r", add=False)[0])
    cur = trie.advance(cur, sp.int_slots[2][0])
    allowed = trie.allowed_tokens(cur)
    [x] = tok.tokenize("x", add=False)
    assert set(allowed) == {x}
    assert set(allowed[x].entities) == {g.entity_id("x one"), g.entity_id("x two")}
    assert allowed[x].entity_start
