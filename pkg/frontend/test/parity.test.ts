import { execFileSync } from "node:child_process";
import { afterEach, describe, expect, it } from "vitest";

import { registerSut, run, plan, RegistrationError } from "../src/index.js";
import type { SutCallbacks, SutHandle } from "../src/index.js";

const MS = 1_000_000;
const SECOND = 1_000_000_000;

/** Deterministic constant-latency SUT used across the parity suite. */
function constantSut(latencyNs: number): SutCallbacks {
  return {
    loadSamples: () => {},
    flush: () => {},
    issueQuery: (query, ctx) => {
      for (const rid of query.responseIds) {
        ctx.complete(rid, { latencyNs });
      }
    },
  };
}

function nativeRun(args: string[]): any {
  const out = execFileSync("python3", ["-m", "loadgauge", "run", "--json", ...args], {
    encoding: "utf8",
  });
  return JSON.parse(out);
}

const handles: SutHandle[] = [];
afterEach(async () => {
  while (handles.length) {
    await handles.pop()!.close();
  }
});

describe("registration contract", () => {
  it("rejects a missing flush callback", () => {
    expect(() =>
      registerSut({ loadSamples: () => {}, issueQuery: () => {} } as unknown as SutCallbacks),
    ).toThrow(RegistrationError);
  });

  it("rejects a missing issueQuery callback", () => {
    expect(() =>
      registerSut({ loadSamples: () => {}, flush: () => {} } as unknown as SutCallbacks),
    ).toThrow(RegistrationError);
  });
});

describe("virtual-time parity", () => {
  it("matches the native constant profile exactly", async () => {
    const handle = registerSut(constantSut(5 * MS));
    handles.push(handle);
    const foreign = await run(
      {
        scenario: "single_stream",
        minDurationNs: SECOND,
        loadedSampleCount: 64,
        rngSeed: 42,
      },
      handle,
      { virtualTime: true },
    );
    const native = nativeRun([
      "--scenario", "single_stream", "--duration-s", "1", "--pool", "64",
      "--seed", "42", "--sut", "sim:constant:5ms", "--virtual-time",
    ]);
    expect(foreign.result.valid).toBe(true);
    expect(foreign.result.metric_value).toBe(native.result.metric_value);
    expect(foreign.result.metric_value).toBe(5 * MS);
    expect(foreign.result.issued_query_count).toBe(native.result.issued_query_count);
    expect(foreign.result.violation_fraction).toBe(native.result.violation_fraction);
  }, 120_000);

  it("plans through the harness CLI", async () => {
    const planned = await plan({ scenario: "server", tailPercentile: 0.99 });
    expect(planned.rounded_query_count).toBe(270336);
  }, 60_000);
});

describe("wall-clock parity", () => {
  it("stays within 2 ms of the native profile at p90", async () => {
    const settings = {
      scenario: "single_stream" as const,
      minDurationNs: 300 * MS,
      minQueryCountOverride: 60,
      loadedSampleCount: 64,
      rngSeed: 7,
    };
    const handle = registerSut(constantSut(5 * MS));
    handles.push(handle);
    const foreign = await run(settings, handle, { virtualTime: false });
    const native = nativeRun([
      "--scenario", "single_stream", "--duration-s", "0.3", "--pool", "64",
      "--seed", "7", "--sut", "sim:constant:5ms",
    ]);
    expect(foreign.result.valid).toBe(true);
    expect(native.result.valid).toBe(true);
    const diff = Math.abs(foreign.result.metric_value - native.result.metric_value);
    expect(diff).toBeLessThanOrEqual(2 * MS);
  }, 120_000);
});

describe("foreign failure surfaces as an invalid run", () => {
  it("exception inside issueQuery invalidates the run", async () => {
    let issued = 0;
    const handle = registerSut({
      loadSamples: () => {},
      flush: () => {},
      issueQuery: (query, ctx) => {
        issued += 1;
        if (issued > 3) {
          throw new Error("synthetic SUT fault");
        }
        for (const rid of query.responseIds) {
          ctx.complete(rid, { latencyNs: 1 * MS });
        }
      },
    });
    handles.push(handle);
    const out = await run(
      {
        scenario: "single_stream",
        minDurationNs: 50 * MS,
        minQueryCountOverride: 10,
        loadedSampleCount: 16,
        rngSeed: 3,
      },
      handle,
      { virtualTime: true },
    );
    expect(out.result.valid).toBe(false);
    expect(JSON.stringify(out.result.diagnostics)).toMatch(/protocol error|never completed|incomplete/);
  }, 60_000);
});
