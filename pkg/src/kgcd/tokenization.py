"""Tokenizer adapter and structural special-token allocation.

The decoding engine is tokenizer-agnostic: anything exposing the
TokenizerAdapter surface works.  SimpleWordTokenizer is the bundled
whitespace word-level implementation used by the CLI and tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

from .errors import ParameterError

INT = "int"
REV = "rev"


@runtime_checkable
class TokenizerAdapter(Protocol):
    @property
    def vocab_size(self) -> int: ...

    def tokenize(self, text: str, add: bool = False) -> list[int]: ...

    def token_text(self, token: int) -> str: ...

    def detokenize(self, tokens: Sequence[int]) -> str: ...

    def allocate_special(self, name: str) -> int: ...

    def is_special(self, token: int) -> bool: ...


@dataclass(frozen=True)
class LinearizerConfig:
    """Structural-token configuration: m consecutive slot tokens per marker."""

    slots: int = 2

    def __post_init__(self) -> None:
        if not 1 <= self.slots <= 4:
            raise ParameterError(f"slots must be in 1..4, got {self.slots}")


class SpecialTokens:
    """Stable id assignment for the structural markers of one config.

    For a fixed config and a fresh tokenizer the assignment is identical
    across processes: specials are allocated first, in a fixed order.
    """

    def __init__(self, tok: TokenizerAdapter, cfg: LinearizerConfig) -> None:
        self.cfg = cfg
        self.head = tok.allocate_special("[Head]")
        self.tail = tok.allocate_special("[Tail]")
        self.sep = tok.allocate_special("[SEP]")
        self.mask = tok.allocate_special("[Mask]")
        self.end = tok.allocate_special("[End]")
        # marker position p in {1, 2}: 1 precedes a relation, 2 precedes an entity
        self.int_slots: dict[int, list[int]] = {}
        self.rev_slots: dict[int, list[int]] = {}
        for p in (1, 2):
            self.int_slots[p] = [
                tok.allocate_special(f"[Int_{p}{j}]") for j in range(1, cfg.slots + 1)
            ]
            self.rev_slots[p] = [
                tok.allocate_special(f"[Rev_{p}{j}]") for j in range(1, cfg.slots + 1)
            ]
        self._marker_ids = {
            t for slots in (*self.int_slots.values(), *self.rev_slots.values()) for t in slots
        }

    def marker(self, kind: str, position: int) -> list[int]:
        table = self.int_slots if kind == INT else self.rev_slots
        return table[position]

    def all_ids(self) -> set[int]:
        return {self.head, self.tail, self.sep, self.mask, self.end} | self._marker_ids

    def manifest(self) -> dict[str, int]:
        out = {
            "head": self.head,
            "tail": self.tail,
            "sep": self.sep,
            "mask": self.mask,
            "end": self.end,
        }
        for p in (1, 2):
            for j, t in enumerate(self.int_slots[p], start=1):
                out[f"int_{p}_{j}"] = t
            for j, t in enumerate(self.rev_slots[p], start=1):
                out[f"rev_{p}_{j}"] = t
        return out


class SimpleWordTokenizer:
    """Whitespace word-level tokenizer with a reserved special-id block.

    Special tokens occupy the low ids (allocated before any text token), so
    the two id spaces never collide.  Word lookup is case-sensitive;
    round-trips reproduce input up to canonical whitespace.
    """

    def __init__(self) -> None:
        self._tokens: list[str] = []
        self._ids: dict[str, int] = {}
        self._special: set[int] = set()
        self._frozen = False

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    def freeze(self) -> None:
        self._frozen = True

    def allocate_special(self, name: str) -> int:
        existing = self._ids.get(name)
        if existing is not None:
            if existing not in self._special:
                raise ParameterError(f"special name {name!r} collides with a word")
            return existing
        idx = self._intern(name)
        self._special.add(idx)
        return idx

    def is_special(self, token: int) -> bool:
        return token in self._special

    def _intern(self, word: str) -> int:
        idx = self._ids.get(word)
        if idx is None:
            if self._frozen:
                raise KeyError(f"unknown word {word!r} (vocabulary frozen)")
            idx = len(self._tokens)
            self._tokens.append(word)
            self._ids[word] = idx
        return idx

    def tokenize(self, text: str, add: bool = True) -> list[int]:
        words = text.split()
        if add:
            return [self._intern(w) for w in words]
        out = []
        for w in words:
            idx = self._ids.get(w)
            if idx is None:
                raise KeyError(f"unknown word {w!r}")
            out.append(idx)
        return out

    def token_text(self, token: int) -> str:
        return self._tokens[token]

    def detokenize(self, tokens: Sequence[int]) -> str:
        return " ".join(self._tokens[t] for t in tokens)

    def vocabulary(self) -> list[str]:
        return list(self._tokens)


def make_tokenizer(
    cfg: LinearizerConfig, entity_names=(), relation_names=()
) -> tuple[SimpleWordTokenizer, SpecialTokens]:
    """Standard construction order: specials first, then graph surface words.

    Allocating the special block before any text keeps its ids a function
    of the config alone, so manifests agree across processes and graphs.
    """
    tok = SimpleWordTokenizer()
    specials = SpecialTokens(tok, cfg)
    for name in entity_names:
        tok.tokenize(name, add=True)
    for name in relation_names:
        tok.tokenize(name, add=True)
    return tok, specials
