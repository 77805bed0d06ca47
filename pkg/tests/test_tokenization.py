"""Tokenizer adapter and special-token allocation."""

from __future__ import annotations

import pytest

from kgcd.errors import ParameterError
from kgcd.tokenization import (
    INT,
    REV,
    LinearizerConfig,
    SimpleWordTokenizer,
    make_tokenizer,
)

from .conftest import graph_from_rows


def test_slots_validation():
    for bad in (0, 5, -1):
        with pytest.raises(ParameterError):
            LinearizerConfig(slots=bad)
    for ok in (1, 2, 3, 4):
        assert LinearizerConfig(slots=ok).slots == ok


def test_specials_occupy_low_id_block():
    g = graph_from_rows([("a", "r", "b")])
    tok, sp = make_tokenizer(LinearizerConfig(slots=2), g.entity_names(), g.relation_names())
    n_special = len(sp.all_ids())
    assert sp.all_ids() == set(range(n_special))
    assert all(tok.is_special(t) for t in range(n_special))
    assert not tok.is_special(n_special)  # first word id


def test_manifest_depends_only_on_config():
    g1 = graph_from_rows([("a", "r", "b")])
    g2 = graph_from_rows([("x", "s", "y"), ("y", "s", "z")])
    _, sp1 = make_tokenizer(LinearizerConfig(slots=2), g1.entity_names(), g1.relation_names())
    _, sp2 = make_tokenizer(LinearizerConfig(slots=2), g2.entity_names(), g2.relation_names())
    assert sp1.manifest() == sp2.manifest()
    _, sp3 = make_tokenizer(LinearizerConfig(slots=1))
    assert sp3.manifest() != sp1.manifest()


def test_marker_groups_and_names():
    tok, sp = make_tokenizer(LinearizerConfig(slots=3))
    assert len(sp.marker(INT, 1)) == 3
    assert tok.token_text(sp.int_slots[1][0]) == "[Int_11]"
    assert tok.token_text(sp.rev_slots[2][2]) == "[Rev_23]"
    assert sp.marker(REV, 2) == sp.rev_slots[2]
    # marker ids are disjoint across kinds and positions
    all_marker = [t for p in (1, 2) for t in sp.int_slots[p] + sp.rev_slots[p]]
    assert len(all_marker) == len(set(all_marker)) == 12


def test_word_roundtrip_and_freeze():
    tok = SimpleWordTokenizer()
    ids = tok.tokenize("hello brave new world", add=True)
    assert tok.detokenize(ids) == "hello brave new world"
    tok.freeze()
    assert tok.tokenize("brave new", add=True) == ids[1:3]  # known words still fine
    with pytest.raises(KeyError):
        tok.tokenize("unseen", add=True)
    with pytest.raises(KeyError):
        tok.tokenize("unseen", add=False)


def test_special_name_collision_rejected():
    tok = SimpleWordTokenizer()
    tok.tokenize("[Head]", add=True)
    with pytest.raises(ParameterError):
        tok.allocate_special("[Head]")


def test_allocate_special_is_idempotent():
    tok = SimpleWordTokenizer()
    a = tok.allocate_special("[X]")
    assert tok.allocate_special("[X]") == a
