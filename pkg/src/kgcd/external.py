"""Line-delimited JSON protocol for host-provided scorers.

A host process spawns `kgcd decode --scorer external` and answers scoring
requests over the child's stdin/stdout:

    engine -> host   {"type": "init", "vocab_size": N, "vocab": [...],
                      "special_tokens": {...}}
    host -> engine   {"type": "ready"}
    engine -> host   {"type": "score", "id": k, "context": [ids]}
    host -> engine   {"type": "logprobs", "id": k, "values": [floats]}
    engine -> host   {"type": "result", "results": [...]}   (then exits 0)
    engine -> host   {"type": "error", "error": {...}}      (then exits 1)

The callback contract is stateless: every request carries the full
context.  A wrong-length reply aborts the decode with no partial output.
"""

from __future__ import annotations

import json
from typing import IO, Sequence

import numpy as np

from .errors import KgcdError


class ProtocolError(KgcdError):
    pass


class StdioScorer:
    """NextTokenScorer backed by the stdio callback protocol."""

    thread_safe = False

    def __init__(self, reader: IO[str], writer: IO[str], vocab, special_tokens) -> None:
        self._reader = reader
        self._writer = writer
        self._next_id = 0
        self._failed = False
        self.vocab_size = len(vocab)
        self._send(
            {
                "type": "init",
                "vocab_size": self.vocab_size,
                "vocab": list(vocab),
                "special_tokens": dict(special_tokens),
            }
        )
        ready = self._recv()
        if ready.get("type") != "ready":
            raise ProtocolError(f"expected ready message, got {ready.get('type')!r}")

    def _send(self, obj: dict) -> None:
        self._writer.write(json.dumps(obj) + "\n")
        self._writer.flush()

    def _recv(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise ProtocolError("host closed the connection")
        return json.loads(line)

    def log_probs(self, context: Sequence[int]) -> np.ndarray:
        if self._failed:
            raise ProtocolError("scorer disabled after a previous failure")
        request_id = self._next_id
        self._next_id += 1
        self._send({"type": "score", "id": request_id, "context": list(context)})
        reply = self._recv()
        if reply.get("type") != "logprobs" or reply.get("id") != request_id:
            self._failed = True
            raise ProtocolError(f"unexpected reply {reply.get('type')!r}")
        values = reply.get("values", [])
        if len(values) != self.vocab_size:
            self._failed = True
            raise ProtocolError(
                f"host returned {len(values)} log-probs, "
                f"declared vocabulary size is {self.vocab_size}"
            )
        return np.asarray(values, dtype=float)

    def send_result(self, results: list[dict]) -> None:
        self._send({"type": "result", "results": results})

    def send_error(self, error: dict) -> None:
        if not self._failed:
            self._send({"type": "error", "error": error})
        self._failed = True
