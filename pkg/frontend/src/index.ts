/**
 * Bindings for the kgcd constrained-retrieval engine.
 *
 * The engine stays a separate process; everything crosses its public
 * surface only: the `ingest`/`manifest`/`decode` subcommands and the
 * line-delimited JSON scorer protocol of `decode --scorer external`.
 * A host-supplied callback plays the next-token model: it receives the
 * full token context each step and must return one log-probability per
 * vocabulary entry.
 */

import { spawn, execFile } from "node:child_process";
import { mkdtemp, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { createInterface } from "node:readline";

/** How to start the engine; override via config or KGCD_BIN. */
const DEFAULT_COMMAND = ["python3", "-m", "kgcd.cli"];

export interface GraphStats {
  entities: number;
  relations: number;
  triplets: number;
}

/** Opaque handle to a loaded (validated) triplet file. */
export interface GraphHandle {
  readonly path: string;
  readonly stats: GraphStats;
}

export interface DialogTurn {
  speaker: string;
  text: string;
}

export interface Dialog {
  turns: DialogTurn[];
  gold_paths?: string[][][];
}

export interface RetrievedPath {
  triplets: string[][];
  orientation: string[];
  logscore: number;
}

export interface DecodeResult {
  paths: RetrievedPath[];
  tokens: number[];
  logscore?: number;
  meta: Record<string, unknown>;
}

/** Subset of the engine's run configuration, mapped onto decode flags. */
export interface DecodeOptions {
  alpha?: number;
  beta?: number;
  katzK?: number;
  beam?: number;
  hops?: number;
  maxPaths?: number;
  slots?: number;
  score?: "katz" | "connection";
  seed?: number;
  strictMentions?: boolean;
  /** Engine launcher, e.g. ["python3", "-m", "kgcd.cli"] or ["kgcd"]. */
  command?: string[];
}

/** Sent by the engine before any scoring request. */
export interface ScorerInit {
  vocabSize: number;
  vocab: string[];
  /** Structural-token ids, so the host can extend its embedding table. */
  specialTokens: Record<string, number>;
}

/** Host next-token model: full context in, dense log-prob row out. */
export type ScorerCallback = (context: number[]) => number[];

/** Builds the callback once the engine has declared its vocabulary. */
export type ScorerFactory = (init: ScorerInit) => ScorerCallback;

export class EngineError extends Error {
  constructor(
    message: string,
    readonly kind: string = "EngineError",
  ) {
    super(message);
    this.name = "EngineError";
  }
}

/** The callback broke its contract (wrong length / non-finite values). */
export class ContractViolationError extends EngineError {
  constructor(message: string) {
    super(message, "ContractViolation");
    this.name = "ContractViolationError";
  }
}

function engineCommand(options?: DecodeOptions): string[] {
  if (options?.command) return options.command;
  const env = process.env.KGCD_BIN;
  if (env) return env.split(" ");
  return DEFAULT_COMMAND;
}

function run(
  command: string[],
  args: string[],
): Promise<{ stdout: string; stderr: string }> {
  return new Promise((resolve, reject) => {
    execFile(
      command[0],
      [...command.slice(1), ...args],
      { maxBuffer: 64 * 1024 * 1024 },
      (error, stdout, stderr) => {
        if (error) {
          reject(new EngineError(stderr.trim() || error.message));
        } else {
          resolve({ stdout, stderr });
        }
      },
    );
  });
}

/** Validate and index a TSV triplet file; rejects on parse errors. */
export async function loadGraph(
  path: string,
  options?: DecodeOptions,
): Promise<GraphHandle> {
  const { stdout } = await run(engineCommand(options), ["ingest", path]);
  const stats = JSON.parse(stdout.trim()) as GraphStats;
  return { path, stats };
}

/** Special-token id manifest for a marker-slot configuration. */
export async function specialTokenManifest(
  slots = 2,
  options?: DecodeOptions,
): Promise<Record<string, number>> {
  const { stdout } = await run(engineCommand(options), [
    "manifest",
    "--slots",
    String(slots),
  ]);
  return JSON.parse(stdout.trim()) as Record<string, number>;
}

function decodeFlags(options?: DecodeOptions): string[] {
  const flags: string[] = [];
  if (!options) return flags;
  const push = (flag: string, value: number | string | undefined) => {
    if (value !== undefined) flags.push(flag, String(value));
  };
  push("--alpha", options.alpha);
  push("--beta", options.beta);
  push("--katz-k", options.katzK);
  push("--beam", options.beam);
  push("--hops", options.hops);
  push("--max-paths", options.maxPaths);
  push("--slots", options.slots);
  push("--score", options.score);
  push("--seed", options.seed);
  if (options.strictMentions) flags.push("--strict-mentions");
  return flags;
}

/** Decode dialogs against a graph with one of the engine's bundled scorers. */
export async function decodeWithBundledScorer(
  graph: GraphHandle,
  dialogs: Dialog[],
  scorer: string,
  options?: DecodeOptions,
): Promise<DecodeResult[]> {
  const dir = await mkdtemp(join(tmpdir(), "kgcd-"));
  try {
    const dialogPath = join(dir, "dialogs.jsonl");
    await writeFile(
      dialogPath,
      dialogs.map((d) => JSON.stringify(d)).join("\n") + "\n",
      "utf-8",
    );
    const { stdout } = await run(engineCommand(options), [
      "decode",
      graph.path,
      dialogPath,
      "--scorer",
      scorer,
      ...decodeFlags(options),
    ]);
    return stdout
      .trim()
      .split("\n")
      .filter((line) => line.length > 0)
      .map((line) => JSON.parse(line) as DecodeResult);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}

interface EngineMessage {
  type: string;
  [key: string]: unknown;
}

/**
 * Decode dialogs with a host callback as the next-token model.
 *
 * Spawns `decode --scorer external` and answers its scoring requests.
 * The engine serializes requests, so the callback is never re-entered.
 * A wrong-length callback result aborts the decode with no partial
 * output, and the callback is not invoked again afterwards.
 */
export async function decode(
  graph: GraphHandle,
  dialogs: Dialog[],
  scorerFactory: ScorerFactory,
  options?: DecodeOptions,
): Promise<DecodeResult[]> {
  const dir = await mkdtemp(join(tmpdir(), "kgcd-"));
  const dialogPath = join(dir, "dialogs.jsonl");
  await writeFile(
    dialogPath,
    dialogs.map((d) => JSON.stringify(d)).join("\n") + "\n",
    "utf-8",
  );
  const command = engineCommand(options);
  const child = spawn(
    command[0],
    [
      ...command.slice(1),
      "decode",
      graph.path,
      dialogPath,
      "--scorer",
      "external",
      ...decodeFlags(options),
    ],
    { stdio: ["pipe", "pipe", "pipe"] },
  );

  let stderrText = "";
  child.stderr.on("data", (chunk: Buffer) => {
    stderrText += chunk.toString();
  });

  const cleanup = async () => {
    child.kill();
    await rm(dir, { recursive: true, force: true });
  };

  try {
    return await new Promise<DecodeResult[]>((resolve, reject) => {
      const lines = createInterface({ input: child.stdout });
      let scorer: ScorerCallback | null = null;
      let vocabSize = 0;
      let failed = false;

      const fail = (error: Error) => {
        if (failed) return;
        failed = true;
        lines.close();
        reject(error);
      };

      const send = (message: EngineMessage) => {
        child.stdin.write(JSON.stringify(message) + "\n");
      };

      lines.on("line", (line) => {
        if (failed) return;
        let message: EngineMessage;
        try {
          message = JSON.parse(line) as EngineMessage;
        } catch {
          fail(new EngineError(`unparseable engine message: ${line}`));
          return;
        }
        switch (message.type) {
          case "init": {
            vocabSize = message.vocab_size as number;
            scorer = scorerFactory({
              vocabSize,
              vocab: message.vocab as string[],
              specialTokens: message.special_tokens as Record<string, number>,
            });
            send({ type: "ready" });
            break;
          }
          case "score": {
            if (!scorer) {
              fail(new EngineError("score request before init"));
              return;
            }
            let values: number[];
            try {
              values = scorer(message.context as number[]);
            } catch (error) {
              fail(
                new EngineError(
                  `scorer callback threw: ${(error as Error).message}`,
                ),
              );
              return;
            }
            if (values.length !== vocabSize) {
              // enforce the contract host-side: stop before the engine
              // can act on a malformed row
              fail(
                new ContractViolationError(
                  `callback returned ${values.length} log-probs, ` +
                    `declared vocabulary size is ${vocabSize}`,
                ),
              );
              return;
            }
            send({ type: "logprobs", id: message.id, values });
            break;
          }
          case "result": {
            lines.close();
            resolve(message.results as DecodeResult[]);
            break;
          }
          case "error": {
            const detail = message.error as { type?: string; message?: string };
            fail(
              new EngineError(
                detail?.message ?? "engine error",
                detail?.type ?? "EngineError",
              ),
            );
            break;
          }
          default:
            fail(new EngineError(`unexpected message type ${message.type}`));
        }
      });

      child.on("error", (error) => fail(new EngineError(error.message)));
      child.on("close", (code) => {
        if (!failed && code !== 0) {
          fail(new EngineError(`engine exited with code ${code}: ${stderrText}`));
        }
      });
    });
  } finally {
    await cleanup();
  }
}

/** Equal log-probability over the whole vocabulary. */
export function uniformScorer(init: ScorerInit): ScorerCallback {
  const row = new Array<number>(init.vocabSize).fill(
    -Math.log(init.vocabSize),
  );
  return () => row;
}

/**
 * Puts 0.99 mass on the next token of a planted sequence, located by the
 * longest prefix of the sequence that suffixes the context; uniform when
 * off the track.
 */
export function plantedScorer(gold: number[]): ScorerFactory {
  return (init) => {
    const uniform = new Array<number>(init.vocabSize).fill(
      -Math.log(init.vocabSize),
    );
    const rest = Math.log(0.01 / Math.max(init.vocabSize - 1, 1));
    return (context) => {
      let target: number | null = null;
      const max = Math.min(gold.length, context.length);
      for (let n = max; n >= 0; n--) {
        let matches = true;
        for (let i = 0; i < n; i++) {
          if (context[context.length - n + i] !== gold[i]) {
            matches = false;
            break;
          }
        }
        if (matches) {
          target = n < gold.length ? gold[n] : null;
          break;
        }
      }
      if (target === null) return uniform;
      const row = new Array<number>(init.vocabSize).fill(rest);
      row[target] = Math.log(0.99);
      return row;
    };
  };
}
