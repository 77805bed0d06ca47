"""Command-line surface for desk-scale experiments and fixtures.

Subcommands stream JSONL in and out (one object per line) so corpora need
not fit in memory.  Every subcommand is deterministic under a fixed
--seed; failures exit nonzero with a machine-readable error object on
stderr.  KGCD_LOG={error,info,debug} controls log verbosity.
"""

from __future__ import annotations

import json
import logging
import os
import random
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from functools import wraps

import click

from .decoding import (
    BigramScorer,
    NextTokenScorer,
    PlantedScorer,
    UniformScorer,
)
from .errors import KgcdError
from .external import StdioScorer
from .graph import load_triplets
from .informativeness import CONNECTION, KATZ
from .linearize import linearize_path, mask_for_reconstruction, sample_paths
from .linking import DialogHistory, link_mentions
from .pipeline import Pipeline, RunConfig
from .supervision import evaluate_surface_corpus, surface_path
from .tokenization import LinearizerConfig, make_tokenizer

log = logging.getLogger("kgcd")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("KGCD_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")


def _fail(exc: Exception) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    sys.stderr.write(json.dumps(payload) + "\n")
    sys.exit(1)


def _guarded(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (KgcdError, OSError, KeyError, json.JSONDecodeError) as exc:
            _fail(exc)

    return wrapper


def _read_dialogs(path: str) -> list[DialogHistory]:
    dialogs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                dialogs.append(DialogHistory.from_jsonl_line(line))
    return dialogs


def _write_lines(output: str | None, lines) -> None:
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
    else:
        for line in lines:
            click.echo(line)


@click.group()
def main() -> None:
    """Knowledge-graph subgraph retrieval by constrained generation."""
    _setup_logging()


@main.command()
@click.argument("kg_tsv", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@_guarded
def ingest(kg_tsv: str, output: str | None) -> None:
    """Load and index a TSV triplet file; print stats JSON."""
    graph = load_triplets(kg_tsv)
    log.info("loaded %s", graph.stats())
    _write_lines(output, [graph.stats_json()])


@main.command()
@click.argument("kg_tsv", type=click.Path(exists=True, dir_okay=False))
@click.argument("dialogs_jsonl", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@_guarded
def link(kg_tsv: str, dialogs_jsonl: str, output: str | None) -> None:
    """Report mentioned entities per dialog as JSONL."""
    graph = load_triplets(kg_tsv)
    from .linking import MentionIndex

    index = MentionIndex(graph)
    lines = []
    for dialog in _read_dialogs(dialogs_jsonl):
        mentions = link_mentions(dialog, graph, index)
        names = [graph.entity_name(e) for e in mentions.entity_ids()]
        lines.append(json.dumps({"mentions": names}))
    _write_lines(output, lines)


def _decode_options(fn):
    for option in reversed(
        [
            click.option("--alpha", type=float, default=0.8, show_default=True),
            click.option("--beta", type=float, default=0.5, show_default=True),
            click.option("--katz-k", type=int, default=2, show_default=True),
            click.option("--beam", type=int, default=5, show_default=True),
            click.option("--hops", type=int, default=2, show_default=True),
            click.option("--max-paths", type=int, default=3, show_default=True),
            click.option("--slots", type=int, default=2, show_default=True),
            click.option(
                "--score",
                type=click.Choice([KATZ, CONNECTION]),
                default=KATZ,
                show_default=True,
            ),
            click.option("--seed", type=int, default=0, show_default=True),
            click.option("--jobs", type=int, default=1, show_default=True),
            click.option("--strict-mentions", is_flag=True, default=False),
            click.option(
                "--scorer",
                default="uniform",
                show_default=True,
                help="uniform | planted | ngram:<corpus-path> | external",
            ),
        ]
    ):
        fn = option(fn)
    return fn


class _LockedScorer:
    """Serializes calls to a scorer that is not safe for concurrent use."""

    def __init__(self, inner: NextTokenScorer) -> None:
        self._inner = inner
        self._lock = threading.Lock()
        self.vocab_size = inner.vocab_size
        self.thread_safe = True

    def log_probs(self, context):
        with self._lock:
            return self._inner.log_probs(context)


def _run_decode(
    pipeline: Pipeline,
    dialogs: list[DialogHistory],
    scorer_name: str,
    jobs: int,
    external_streams=None,
) -> tuple[list[dict], StdioScorer | None]:
    for dialog in dialogs:
        pipeline.intern_dialog(dialog)
    shared: NextTokenScorer | None = None
    stdio: StdioScorer | None = None
    if scorer_name.startswith("ngram:"):
        corpus_path = scorer_name.split(":", 1)[1]
        with open(corpus_path, encoding="utf-8") as fh:
            corpus = [pipeline.tok.tokenize(line, add=True) for line in fh]
        corpus = [seq for seq in corpus if seq]
    pipeline.freeze()
    vocab_size = pipeline.tok.vocab_size

    if scorer_name == "uniform":
        shared = UniformScorer(vocab_size)
    elif scorer_name == "planted":
        shared = None  # built per dialog from its gold paths
    elif scorer_name.startswith("ngram:"):
        shared = BigramScorer(corpus, vocab_size)
    elif scorer_name == "external":
        reader, writer = external_streams
        stdio = StdioScorer(
            reader, writer, pipeline.tok.vocabulary(), pipeline.sp.manifest()
        )
        shared = stdio
        jobs = 1  # protocol scorer is stateful over one stream
    else:
        raise KgcdError(f"unknown scorer {scorer_name!r}")

    if shared is not None and jobs > 1 and not getattr(shared, "thread_safe", False):
        shared = _LockedScorer(shared)

    def decode_one(dialog: DialogHistory) -> dict:
        if shared is not None:
            scorer: NextTokenScorer = shared
        else:
            gold = pipeline.gold_target_tokens(dialog)
            scorer = (
                PlantedScorer(gold, vocab_size)
                if gold != [pipeline.sp.end]
                else UniformScorer(vocab_size)
            )
        return pipeline.decode_dialog(dialog, scorer).to_json_obj(pipeline)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(decode_one, dialogs))
    else:
        results = [decode_one(d) for d in dialogs]
    return results, stdio


@main.command()
@click.argument("kg_tsv", type=click.Path(exists=True, dir_okay=False))
@click.argument("dialogs_jsonl", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@_decode_options
@_guarded
def decode(
    kg_tsv: str,
    dialogs_jsonl: str,
    output: str | None,
    alpha: float,
    beta: float,
    katz_k: int,
    beam: int,
    hops: int,
    max_paths: int,
    slots: int,
    score: str,
    seed: int,
    jobs: int,
    strict_mentions: bool,
    scorer: str,
) -> None:
    """Full pipeline: link -> k-hop -> trie -> informativeness -> beam decode."""
    graph = load_triplets(kg_tsv)
    cfg = RunConfig(
        alpha=alpha,
        beta=beta,
        katz_k=katz_k,
        hops=hops,
        beam=beam,
        max_paths=max_paths,
        slots=slots,
        score=score,
        seed=seed,
        strict_starts=strict_mentions,
    )
    pipeline = Pipeline(graph, cfg)
    dialogs = _read_dialogs(dialogs_jsonl)

    if scorer == "external":
        stdout = sys.stdout
        try:
            results, stdio = _run_decode(
                pipeline, dialogs, scorer, jobs, external_streams=(sys.stdin, stdout)
            )
            stdio.send_result(results)
        except Exception as exc:
            payload = {"type": type(exc).__name__, "message": str(exc)}
            stdout.write(json.dumps({"type": "error", "error": payload}) + "\n")
            stdout.flush()
            sys.exit(1)
        return

    results, _ = _run_decode(pipeline, dialogs, scorer, jobs)
    _write_lines(output, [json.dumps(r) for r in results])


@main.command("recon-sample")
@click.argument("kg_tsv", type=click.Path(exists=True, dir_okay=False))
@click.option("--count", type=int, required=True)
@click.option("--hops", type=int, default=2, show_default=True)
@click.option("--slots", type=int, default=2, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@_guarded
def recon_sample(
    kg_tsv: str, count: int, hops: int, slots: int, seed: int, output: str | None
) -> None:
    """Sample masked reconstruction examples as JSONL."""
    graph = load_triplets(kg_tsv)
    tok, sp = make_tokenizer(
        LinearizerConfig(slots=slots), graph.entity_names(), graph.relation_names()
    )
    rng = random.Random(seed)
    lines = []
    for path in sample_paths(graph, hops, count, rng):
        seq = linearize_path(path, graph, tok, sp)
        example = mask_for_reconstruction(seq, sp, rng)
        lines.append(
            json.dumps(
                {
                    "input": example.input.ids,
                    "target": example.target.ids,
                    "masked": example.masked,
                }
            )
        )
    _write_lines(output, lines)


@main.command()
@click.argument("results_jsonl", type=click.Path(exists=True, dir_okay=False))
@click.argument("dialogs_jsonl", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", type=click.Path(dir_okay=False), default=None)
@click.option("--per-dialog", "per_dialog_out", type=click.Path(dir_okay=False), default=None)
@_guarded
def eval(
    results_jsonl: str,
    dialogs_jsonl: str,
    output: str | None,
    per_dialog_out: str | None,
) -> None:
    """path@k of decode results against gold paths; report JSON."""
    retrieved = []
    nlls = []
    with open(results_jsonl, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            retrieved.append([surface_path(p["triplets"]) for p in obj["paths"]])
            nlls.append(-obj.get("logscore", 0.0))
    gold = [
        [surface_path(path) for path in dialog.gold_paths]
        for dialog in _read_dialogs(dialogs_jsonl)
    ]
    report = evaluate_surface_corpus(retrieved, gold, nlls)
    _write_lines(output, [report.to_json()])
    if per_dialog_out:
        with open(per_dialog_out, "w", encoding="utf-8") as fh:
            for entry in report.per_dialog:
                fh.write(json.dumps(entry) + "\n")


@main.command()
@click.option("--slots", type=int, default=2, show_default=True)
@_guarded
def manifest(slots: int) -> None:
    """Special-token manifest JSON for the given marker-slot config."""
    _, sp = make_tokenizer(LinearizerConfig(slots=slots))
    click.echo(json.dumps(sp.manifest()))


if __name__ == "__main__":
    main()
