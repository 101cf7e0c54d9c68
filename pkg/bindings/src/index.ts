/**
 * Thin wrappers around the `lacon` command-line tool.
 *
 * Everything here shells out to the CLI and parses its JSON output, so the
 * numerical behaviour is exactly the core implementation's: no formulas are
 * duplicated on this side. The `lacon` executable must be on PATH (or passed
 * explicitly via `bin`).
 */
import { execFileSync } from "node:child_process";

export interface QualityRecord {
  id: string;
  s_aes: number;
  s_wat: number;
  s_cla: number;
  s_ent: number;
  s_luma: number;
}

export interface LaconOptions {
  /** Path to the lacon executable; defaults to "lacon" on PATH. */
  bin?: string;
  /** Long-side target for scale normalization before scoring. */
  targetLongSide?: number;
}

export class LaconError extends Error {}

function runLacon(args: string[], bin: string): string {
  try {
    return execFileSync(bin, args, { encoding: "utf8", stdio: ["ignore", "pipe", "pipe"] });
  } catch (err: unknown) {
    const e = err as { stderr?: string; message?: string };
    const detail = (e.stderr ?? "").trim() || e.message || "lacon invocation failed";
    throw new LaconError(detail);
  }
}

/**
 * Score a single PNG with the five quality signals.
 *
 * Equivalent to `lacon label <path>`; throws LaconError (carrying the CLI's
 * message) for missing or undecodable files.
 */
export function labelImage(path: string, opts: LaconOptions = {}): QualityRecord {
  const args = ["label", path];
  if (opts.targetLongSide !== undefined) {
    args.push("--target-long-side", String(opts.targetLongSide));
  }
  const out = runLacon(args, opts.bin ?? "lacon");
  return JSON.parse(out) as QualityRecord;
}

/**
 * GCC anchor weights for one attribute at one or more scores.
 *
 * Equivalent to `lacon weights <attribute> <scores...>`; returns one weight
 * vector per score. Unknown attributes raise LaconError listing the valid
 * names, mirroring the CLI.
 */
export function gccWeights(
  attribute: string,
  scores: number | number[],
  opts: LaconOptions = {},
): number[][] {
  const list = Array.isArray(scores) ? scores : [scores];
  if (list.length === 0) {
    throw new LaconError("at least one score is required");
  }
  const args = ["weights", attribute, ...list.map((s) => String(s))];
  const out = runLacon(args, opts.bin ?? "lacon");
  return JSON.parse(out) as number[][];
}
