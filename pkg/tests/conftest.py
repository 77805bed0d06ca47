"""Shared fixtures: small graphs, tokenizers, random-graph generators."""

from __future__ import annotations

import random

import pytest

from kgcd.graph import KnowledgeGraph, load_triplets
from kgcd.tokenization import LinearizerConfig, make_tokenizer


def graph_from_rows(rows: list[tuple[str, str, str]]) -> KnowledgeGraph:
    text = "".join(f"{h}\t{r}\t{t}\n" for h, r, t in rows)
    return load_triplets(text.encode("utf-8"))


CHAIN_ROWS = [("a", "r_ab", "b"), ("b", "r_bc", "c")]

TABLE5_ROWS = [
    ("Ashton Kutcher", "romantic relationship (with celebrities)", "Mila Kunis"),
    ("Friends with Benefits", "starred_actors", "Mila Kunis"),
    ("Friends with Benefits", "starred_actors", "Patricia Clarkson"),
    ("Justin Timberlake", "place musical career began", "Shelby Forest"),
    ("Justin Timberlake", "place musical career began", "Millington"),
    ("Justin Timberlake", "romantic relationship (with celebrities)", "Scarlett Johansson"),
]

SCARLET_ROWS = [
    ("Scarlet Letter", "written by", "N.Hawthorne"),
    ("Moby Dick", "written by", "H.Melville"),
    ("N.Hawthorne", "born in", "Salem"),
]


@pytest.fixture
def chain_graph() -> KnowledgeGraph:
    return graph_from_rows(CHAIN_ROWS)


@pytest.fixture
def table5_graph() -> KnowledgeGraph:
    return graph_from_rows(TABLE5_ROWS)


@pytest.fixture
def scarlet_graph() -> KnowledgeGraph:
    return graph_from_rows(SCARLET_ROWS)


def tokenizer_for(graph: KnowledgeGraph, slots: int = 1):
    return make_tokenizer(
        LinearizerConfig(slots=slots), graph.entity_names(), graph.relation_names()
    )


def random_graph(
    rng: random.Random, n_nodes: int, n_edges: int, n_relations: int = 4
) -> KnowledgeGraph:
    """Random multigraph with single-word entity names e0..e{n-1}."""
    rows = []
    seen = set()
    for _ in range(n_edges):
        h = rng.randrange(n_nodes)
        t = rng.randrange(n_nodes)
        r = rng.randrange(n_relations)
        if (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        rows.append((f"e{h}", f"rel{r}", f"e{t}"))
    if not rows:
        rows = [("e0", "rel0", "e1")]
    return graph_from_rows(rows)
