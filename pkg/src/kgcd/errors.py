"""Exception hierarchy shared across the package."""

from __future__ import annotations


class KgcdError(Exception):
    """Base class for all package errors."""


class TripletParseError(KgcdError):
    """Malformed row in a triplet stream."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class GraphLookupError(KgcdError):
    """Unknown entity or relation."""


class StructureError(KgcdError):
    """Broken path chain or malformed structural input."""


class SequenceParseError(KgcdError):
    """Token sequence violates the linearization grammar."""

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"position {position}: {message}")
        self.position = position


class ResolutionError(KgcdError):
    """Surface text does not resolve against the graph."""


class ConstraintViolation(KgcdError):
    """A token outside the allowed set was fed to the automaton."""

    def __init__(self, token: int, position: int) -> None:
        super().__init__(f"token {token} not allowed at position {position}")
        self.token = token
        self.position = position


class NoRetrievableKnowledge(KgcdError):
    """Candidate subgraph admits no valid linearization."""


class ParameterError(KgcdError):
    """Configuration value outside its documented range."""


class DeadEndError(KgcdError):
    """Decoder reached a state with no allowed tokens (internal bug)."""


class ScorerError(KgcdError):
    """Scorer failure, annotated with the decode step where it occurred."""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(f"step {step}: {message}")
        self.step = step
