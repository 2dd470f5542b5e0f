/** Shared shapes for the SUT bindings and the harness runner. */

export type Scenario = "single_stream" | "multi_stream" | "server" | "offline";
export type Mode = "performance" | "accuracy";
export type ClockKind = "virtual" | "wall";

/** One query as delivered over the wire from the harness. */
export interface IssuedQuery {
  queryId: number;
  responseIds: number[];
  sampleIndices: number[];
  /** Harness-side issue timestamp (ns); virtual or monotonic per `clock`. */
  issueNs: number;
  mode: Mode;
  /** Whether the harness wants response payloads logged for this query. */
  log: boolean;
  clock: ClockKind;
}

/** Exported back to the SUT: deliver completions, from any context. */
export interface CompletionContext {
  /**
   * Complete one response id. `latencyNs` is the declared service time
   * relative to the issue stamp: in virtual time it defines the completion
   * timestamp; on the wall clock the binding delays delivery by that long
   * (omitted = complete immediately, stamped on arrival harness-side).
   */
  complete(responseId: number, opts?: { latencyNs?: number; payload?: Uint8Array }): void;
}

export interface SutCallbacks {
  loadSamples(indices: number[]): void;
  issueQuery(query: IssuedQuery, ctx: CompletionContext): void;
  flush(): void;
}

/** Harness run settings; camelCase mirrors of the config-file schema. */
export interface Settings {
  scenario: Scenario;
  mode?: Mode;
  tailPercentile?: number;
  confidence?: number;
  latencyBoundNs?: number;
  targetQps?: number;
  intervalNs?: number;
  samplesPerQuery?: number;
  qosViolationBudget?: number;
  minDurationNs?: number;
  minQueryCountOverride?: number;
  rngSeed?: number;
  loadedSampleCount?: number;
  serverRunCount?: number;
  unsafeOverride?: boolean;
}

export interface RunSummary {
  scenario: Scenario;
  metric_name: string;
  metric_value: number | null;
  valid: boolean;
  violation_fraction: number;
  duration_ns: number;
  issued_query_count: number;
  completed_query_count: number;
  diagnostics: string[];
  [key: string]: unknown;
}

export interface RunOutput {
  result: RunSummary;
  runs: RunSummary[];
  bundle?: string;
}

const KEY_MAP: Record<string, string> = {
  scenario: "scenario",
  mode: "mode",
  tailPercentile: "tail_percentile",
  confidence: "confidence",
  latencyBoundNs: "latency_bound_ns",
  targetQps: "target_qps",
  intervalNs: "interval_ns",
  samplesPerQuery: "samples_per_query",
  qosViolationBudget: "qos_violation_budget",
  minDurationNs: "min_duration_ns",
  minQueryCountOverride: "min_query_count_override",
  rngSeed: "rng_seed",
  loadedSampleCount: "loaded_sample_count",
  serverRunCount: "server_run_count",
  unsafeOverride: "unsafe_override",
};

/** Settings in the harness's snake_case config-file schema. */
export function toConfigObject(settings: Settings): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  for (const [key, value] of Object.entries(settings)) {
    if (value === undefined) continue;
    const mapped = KEY_MAP[key];
    if (!mapped) {
      throw new Error(`unknown settings key ${key}`);
    }
    out[mapped] = value;
  }
  return out;
}
