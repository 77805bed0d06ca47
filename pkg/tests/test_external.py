"""Stdio callback-scorer protocol: framing, handshake, and failure modes."""

from __future__ import annotations

import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from kgcd.external import ProtocolError, StdioScorer

VOCAB = ["[Head]", "[Tail]", "a", "b"]
MANIFEST = {"head": 0, "tail": 1}


def _scripted_host(replies):
    """Reader pre-loaded with host replies, writer capturing engine messages."""
    reader = io.StringIO("".join(json.dumps(r) + "\n" for r in replies))
    writer = io.StringIO()
    return reader, writer


def _sent(writer):
    return [json.loads(l) for l in writer.getvalue().strip().splitlines()]


def test_handshake_and_scoring():
    row = [-math.log(4)] * 4
    reader, writer = _scripted_host(
        [
            {"type": "ready"},
            {"type": "logprobs", "id": 0, "values": row},
            {"type": "logprobs", "id": 1, "values": row},
        ]
    )
    scorer = StdioScorer(reader, writer, VOCAB, MANIFEST)
    assert scorer.vocab_size == 4
    np.testing.assert_allclose(scorer.log_probs([0, 2]), row)
    np.testing.assert_allclose(scorer.log_probs([]), row)
    sent = _sent(writer)
    assert sent[0]["type"] == "init"
    assert sent[0]["vocab"] == VOCAB
    assert sent[0]["special_tokens"] == MANIFEST
    assert sent[1] == {"type": "score", "id": 0, "context": [0, 2]}
    assert sent[2] == {"type": "score", "id": 1, "context": []}


def test_missing_ready_rejected():
    reader, writer = _scripted_host([{"type": "logprobs", "id": 0, "values": []}])
    with pytest.raises(ProtocolError):
        StdioScorer(reader, writer, VOCAB, MANIFEST)


def test_wrong_length_reply_disables_scorer():
    reader, writer = _scripted_host(
        [
            {"type": "ready"},
            {"type": "logprobs", "id": 0, "values": [0.0, 0.0]},
            {"type": "logprobs", "id": 1, "values": [0.0] * 4},
        ]
    )
    scorer = StdioScorer(reader, writer, VOCAB, MANIFEST)
    with pytest.raises(ProtocolError):
        scorer.log_probs([])
    with pytest.raises(ProtocolError):
        scorer.log_probs([])  # no further requests after a failure
    assert sum(1 for m in _sent(writer) if m["type"] == "score") == 1


def test_mismatched_id_rejected():
    reader, writer = _scripted_host(
        [{"type": "ready"}, {"type": "logprobs", "id": 99, "values": [0.0] * 4}]
    )
    scorer = StdioScorer(reader, writer, VOCAB, MANIFEST)
    with pytest.raises(ProtocolError):
        scorer.log_probs([])


def test_closed_stream_rejected():
    reader, writer = _scripted_host([{"type": "ready"}])
    scorer = StdioScorer(reader, writer, VOCAB, MANIFEST)
    with pytest.raises(ProtocolError):
        scorer.log_probs([])


HOST_SCRIPT = r"""
import json, math, sys

init = json.loads(sys.stdin.readline())
assert init["type"] == "init"
n = init["vocab_size"]
print(json.dumps({"type": "ready"}), flush=True)
row = [-math.log(n)] * n
while True:
    line = sys.stdin.readline()
    if not line:
        break
    msg = json.loads(line)
    if msg["type"] == "score":
        print(json.dumps({"type": "logprobs", "id": msg["id"], "values": row}),
              flush=True)
    else:
        json.dump(msg, open(sys.argv[1], "w"))
        break
"""


def test_subprocess_roundtrip(tmp_path):
    """Full engine<->host loop over real pipes, host = uniform scorer."""
    kg = tmp_path / "kg.tsv"
    kg.write_text("a\tr_ab\tb\nb\tr_bc\tc\n", encoding="utf-8")
    dialogs = tmp_path / "d.jsonl"
    dialogs.write_text(
        json.dumps({"turns": [{"speaker": "u", "text": "about a"}]}) + "\n",
        encoding="utf-8",
    )
    host = tmp_path / "host.py"
    host.write_text(HOST_SCRIPT, encoding="utf-8")
    final = tmp_path / "final.json"

    engine = subprocess.Popen(
        [sys.executable, "-m", "kgcd.cli", "decode", str(kg), str(dialogs), "--scorer", "external"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
    )
    host_proc = subprocess.Popen(
        [sys.executable, str(host), str(final)],
        stdin=engine.stdout,
        stdout=engine.stdin,
        text=True,
    )
    # hand the pipe ends fully to the children
    engine.stdout.close()
    engine.stdin.close()
    host_proc.wait(timeout=60)
    engine.wait(timeout=60)
    assert engine.returncode == 0
    result = json.loads(final.read_text(encoding="utf-8"))
    assert result["type"] == "result"
    [decoded] = result["results"]
    assert decoded["paths"] and decoded["tokens"]

    # the external decode must agree with the in-core uniform decode
    from click.testing import CliRunner

    from kgcd.cli import main

    local = CliRunner().invoke(main, ["decode", str(kg), str(dialogs)])
    assert local.exit_code == 0
    assert json.loads(local.output.strip()) == decoded
