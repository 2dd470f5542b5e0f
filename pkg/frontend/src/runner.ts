/**
 * Drive the measurement harness against a registered SUT.
 *
 * The harness stays the single source of truth: this module writes a config
 * file in the harness's schema, invokes its CLI, and parses the JSON result.
 */
import { spawn } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import type { RunOutput, Settings } from "./types.js";
import { toConfigObject } from "./types.js";
import type { SutHandle } from "./sut.js";

export interface RunOptions {
  /** Python interpreter with the harness installed (default: python3). */
  python?: string;
  virtualTime?: boolean;
  /** Output root for a submission bundle; omitted = no bundle. */
  out?: string;
  timeoutMs?: number;
}

export class HarnessError extends Error {
  constructor(message: string, readonly exitCode: number | null, readonly stderr: string) {
    super(message);
  }
}

function invoke(
  python: string,
  args: string[],
  timeoutMs: number,
): Promise<{ code: number | null; stdout: string; stderr: string }> {
  return new Promise((resolve, reject) => {
    const child = spawn(python, args, { stdio: ["ignore", "pipe", "pipe"] });
    let stdout = "";
    let stderr = "";
    const timer = setTimeout(() => {
      child.kill("SIGKILL");
      reject(new HarnessError(`harness timed out after ${timeoutMs} ms`, null, stderr));
    }, timeoutMs);
    child.stdout.on("data", (d) => (stdout += d));
    child.stderr.on("data", (d) => (stderr += d));
    child.on("error", (err) => {
      clearTimeout(timer);
      reject(err);
    });
    child.on("close", (code) => {
      clearTimeout(timer);
      resolve({ code, stdout, stderr });
    });
  });
}

/**
 * Execute one run (server scenario: the full repeated-run protocol) against
 * the SUT behind `handle`. Resolves with the harness's JSON output; an
 * invalid run resolves normally with `result.valid === false`.
 */
export async function run(
  settings: Settings,
  handle: SutHandle,
  opts: RunOptions = {},
): Promise<RunOutput> {
  const python = opts.python ?? "python3";
  if (!handle.port) {
    await handle.listen();
  }
  const dir = mkdtempSync(join(tmpdir(), "loadgauge-"));
  try {
    const config: Record<string, unknown> = {
      ...toConfigObject(settings),
      sut: handle.sutSpec,
      virtual_time: Boolean(opts.virtualTime),
    };
    if (opts.out) {
      config.out = opts.out;
    }
    const configPath = join(dir, "config.json");
    writeFileSync(configPath, JSON.stringify(config));
    const args = ["-m", "loadgauge", "run", "--config", configPath, "--json"];
    const { code, stdout, stderr } = await invoke(python, args, opts.timeoutMs ?? 300_000);
    if (code !== 0 && code !== 1) {
      throw new HarnessError(`harness exited with ${code}`, code, stderr);
    }
    return JSON.parse(stdout) as RunOutput;
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Query-count planning via the harness CLI. */
export async function plan(
  settings: Settings,
  opts: RunOptions = {},
): Promise<Record<string, unknown>> {
  const python = opts.python ?? "python3";
  const dir = mkdtempSync(join(tmpdir(), "loadgauge-"));
  try {
    const configPath = join(dir, "config.json");
    writeFileSync(configPath, JSON.stringify(toConfigObject(settings)));
    const { code, stdout, stderr } = await invoke(
      python,
      ["-m", "loadgauge", "plan", "--config", configPath, "--json"],
      opts.timeoutMs ?? 60_000,
    );
    if (code !== 0) {
      throw new HarnessError(`plan failed with ${code}`, code, stderr);
    }
    return JSON.parse(stdout) as Record<string, unknown>;
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}
