"""Scenario metrics, validity verdicts, multi-run aggregation and load search.

Percentiles use the nearest-rank definition (sorted ascending, element at
ceil(p*n) - 1): conservative, interpolation-free and bit-exact across
implementations, which the submission checker relies on.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import LatencyRecord, RunResult, ScenarioKind, TestSettings, ValidationError
from .planner import QueryPlan, plan_for_scenario

SECOND = 1_000_000_000

METRIC_NAMES = {
    ScenarioKind.SINGLE_STREAM: "p90_latency_ns",
    ScenarioKind.MULTI_STREAM: "max_streams",
    ScenarioKind.SERVER: "max_poisson_qps",
    ScenarioKind.OFFLINE: "offline_samples_per_sec",
}


class AggregationError(ValueError):
    pass


def percentile(latencies: Sequence[int] | np.ndarray, p: float) -> int:
    """Nearest-rank percentile of a non-empty latency list."""
    n = len(latencies)
    if n == 0:
        raise ValidationError(["percentile of an empty list is undefined"])
    if not (0.0 < p < 1.0):
        raise ValidationError([f"percentile fraction must be in (0,1), got {p}"])
    arr = np.sort(np.asarray(latencies))
    rank = int(np.ceil(p * n))
    return int(arr[rank - 1])


def _budget_holds(violations: int, issued: int, budget: float) -> bool:
    # integer-exact comparison so a fraction exactly at the budget passes
    return Fraction(violations, issued) <= Fraction(str(budget))


def _records_to_raw(settings: TestSettings, records: Iterable[LatencyRecord],
                    duration_ns: Optional[int], plan: Optional[QueryPlan]):
    from .engine import RawRun  # local import to keep module layering acyclic
    from .core import settings_digest

    recs = list(records)
    raw = RawRun(
        settings=settings,
        plan=plan or plan_for_scenario(settings),
        run_seed=settings.rng_seed,
        settings_digest=settings_digest(settings),
        trace_digest=0,
        sut_name="records",
        virtual=True,
    )
    raw.issued = raw.completed = len(recs)
    raw.sched_ns = np.array([r.issue_ns for r in recs], np.int64)
    raw.issue_ns = raw.sched_ns
    raw.complete_ns = np.array([r.complete_ns for r in recs], np.int64)
    raw.skipped = np.array([r.skipped_intervals for r in recs], np.int64)
    if duration_ns is None:
        duration_ns = int(raw.complete_ns.max(initial=0))
    raw.duration_ns = duration_ns
    return raw


def evaluate_records(settings: TestSettings, records: Iterable[LatencyRecord],
                     duration_ns: Optional[int] = None,
                     plan: Optional[QueryPlan] = None,
                     enforce_floors: bool = False) -> RunResult:
    """Evaluate a bare record set (synthetic or replayed from logs).

    Floors are skipped by default so constraint arithmetic can be tested in
    isolation; the engine path always enforces them.
    """
    raw = _records_to_raw(settings, records, duration_ns, plan)
    return evaluate_run(raw, enforce_floors=enforce_floors)


def evaluate_run(raw, enforce_floors: bool = True) -> RunResult:
    """Turn a run's raw data into its scenario metric and validity verdict."""
    settings: TestSettings = raw.settings
    plan: QueryPlan = raw.plan
    scenario = settings.scenario
    diagnostics: list[str] = list(raw.extra_diagnostics)
    issued = raw.issued
    done = raw.complete_ns[:issued] >= 0
    latencies = (raw.complete_ns[:issued] - raw.issue_ns[:issued])[done]
    completed = int(done.sum())
    valid = True

    if issued == 0:
        return RunResult(
            scenario=scenario, metric_name=METRIC_NAMES[scenario], metric_value=None,
            valid=False, violation_fraction=0.0, duration_ns=raw.duration_ns,
            issued_query_count=0, completed_query_count=0,
            diagnostics=("no queries issued",), settings_digest=raw.settings_digest,
            run_seed=raw.run_seed, raw=raw,
        )

    if raw.incomplete:
        valid = False
        diagnostics.append(
            f"incomplete run: {raw.incomplete} of {issued} queries never completed"
        )

    accuracy_mode = settings.mode.value == "accuracy"
    if enforce_floors and not accuracy_mode:
        floor = 1 if scenario is ScenarioKind.OFFLINE else plan.effective_min_queries
        if issued < floor:
            valid = False
            diagnostics.append(
                f"issued {issued} queries, below the required minimum {floor}"
            )
        if raw.duration_ns < settings.min_duration_ns:
            valid = False
            diagnostics.append(
                "run lasted %.3f s, below the %.0f s duration floor"
                % (raw.duration_ns / 1e9, settings.min_duration_ns / 1e9)
            )
        if scenario is ScenarioKind.OFFLINE and raw.samples_per_query < plan.scenario_min:
            valid = False
            diagnostics.append(
                f"offline query carried {raw.samples_per_query} samples, "
                f"below the {plan.scenario_min} floor"
            )

    violation_fraction = 0.0
    if scenario is ScenarioKind.SERVER:
        bound = settings.latency_bound_ns
        violations = int((latencies > bound).sum())
        violation_fraction = violations / issued if issued else 0.0
        if not _budget_holds(violations, issued, settings.qos_violation_budget):
            valid = False
            diagnostics.append(
                "%.4f%% of queries exceeded the %.0f ms latency bound "
                "(budget %.0f%%)"
                % (100 * violation_fraction, bound / 1e6,
                   100 * settings.qos_violation_budget)
            )
    elif scenario is ScenarioKind.MULTI_STREAM:
        violations = int((raw.skipped[:issued] >= 1).sum())
        violation_fraction = violations / issued if issued else 0.0
        if not _budget_holds(violations, issued, settings.qos_violation_budget):
            valid = False
            diagnostics.append(
                "%.4f%% of queries produced skipped intervals (budget %.0f%%)"
                % (100 * violation_fraction, 100 * settings.qos_violation_budget)
            )

    metric_value: Optional[float] = None
    active_window = 0
    if completed:
        first_issue = int(raw.issue_ns[:issued][done].min())
        last_complete = int(raw.complete_ns[:issued][done].max())
        active_window = last_complete - first_issue
        if scenario is ScenarioKind.SINGLE_STREAM:
            metric_value = float(percentile(latencies, settings.tail_percentile))
        elif scenario is ScenarioKind.MULTI_STREAM:
            metric_value = float(settings.samples_per_query)
        elif scenario is ScenarioKind.SERVER:
            issue_span = int(raw.issue_ns[issued - 1] - raw.issue_ns[0])
            metric_value = (issued - 1) / (issue_span / SECOND) if issue_span > 0 else None
        else:  # OFFLINE: throughput over the active window, not padded wall time
            total_samples = issued * raw.samples_per_query
            metric_value = total_samples / (active_window / SECOND) if active_window > 0 else None
    else:
        valid = False
        diagnostics.append("no queries completed")

    return RunResult(
        scenario=scenario,
        metric_name=METRIC_NAMES[scenario],
        metric_value=metric_value,
        valid=valid,
        violation_fraction=violation_fraction,
        duration_ns=raw.duration_ns,
        issued_query_count=issued,
        completed_query_count=completed,
        active_window_ns=active_window,
        diagnostics=tuple(diagnostics),
        settings_digest=raw.settings_digest,
        run_seed=raw.run_seed,
        protocol_violations=raw.protocol_violations,
        raw=raw,
    )


def aggregate_server_runs(results: Sequence[RunResult],
                          expected_runs: Optional[int] = None) -> RunResult:
    """Min-of-N aggregate for the repeated server protocol.

    Any invalid member invalidates the aggregate; mixed settings digests are
    an error because the runs would not be comparable.
    """
    if not results:
        raise AggregationError("no runs to aggregate")
    digests = {r.settings_digest for r in results}
    if len(digests) > 1:
        raise AggregationError(f"mixed settings digests in aggregate: {sorted(digests)}")
    if expected_runs is not None and len(results) < expected_runs:
        raise AggregationError(
            f"server protocol needs {expected_runs} runs, got {len(results)}"
        )
    invalid = [i for i, r in enumerate(results) if not r.valid]
    diagnostics: tuple[str, ...] = ()
    if invalid:
        diagnostics = tuple(
            f"run {i + 1} invalid: " + ("; ".join(results[i].diagnostics) or "unspecified")
            for i in invalid
        )
    values = [r.metric_value for r in results if r.metric_value is not None]
    metric = min(values) if values and not invalid else None
    base = min(results, key=lambda r: (r.metric_value if r.metric_value is not None else float("inf")))
    return RunResult(
        scenario=base.scenario,
        metric_name=base.metric_name,
        metric_value=metric,
        valid=not invalid,
        violation_fraction=max(r.violation_fraction for r in results),
        duration_ns=max(r.duration_ns for r in results),
        issued_query_count=sum(r.issued_query_count for r in results),
        completed_query_count=sum(r.completed_query_count for r in results),
        diagnostics=diagnostics,
        settings_digest=base.settings_digest,
        run_seed=base.run_seed,
    )


@dataclass(frozen=True)
class SearchOutcome:
    """Largest passing operating point found by bisection."""

    metric_name: str
    value: Optional[float]
    saturated: bool = False
    anomaly: bool = False
    probes: tuple = ()  # (operating point, aggregate valid) per probe


def run_server_protocol(settings: TestSettings, sut_profile, virtual: bool = True,
                        log_fraction: Optional[float] = None) -> tuple[RunResult, list[RunResult]]:
    """The five-run server procedure: per-run derived seeds, min aggregate."""
    from . import engine
    from .rng import per_run_seed

    runs = []
    for i in range(settings.server_run_count):
        seed = per_run_seed(settings.rng_seed, i)
        runs.append(engine.run(settings, sut_profile, virtual=virtual,
                               run_seed=seed, log_fraction=log_fraction))
    return aggregate_server_runs(runs, expected_runs=settings.server_run_count), runs


def search_max_qps(sut_profile, settings: TestSettings, lo_qps: float, hi_qps: float,
                   resolution: float, virtual: bool = True) -> SearchOutcome:
    """Largest Poisson rate on the resolution grid whose aggregate is valid.

    Each probe runs the full repeated-run server protocol; pass/fail is
    assumed monotone in the rate and bisected. Probes are logged so a
    non-monotone SUT is at least visible in the outcome.
    """
    if settings.scenario is not ScenarioKind.SERVER:
        raise ValidationError(["search_max_qps requires server-scenario settings"])
    if not (0 < lo_qps <= hi_qps) or resolution <= 0:
        raise ValidationError(["need 0 < lo_qps <= hi_qps and resolution > 0"])

    probes: list[tuple[float, bool]] = []

    def probe(qps: float) -> bool:
        s = settings.with_(target_qps=qps)
        agg, _ = run_server_protocol(s, sut_profile, virtual=virtual)
        probes.append((qps, agg.valid))
        return agg.valid

    if not probe(lo_qps):
        return SearchOutcome("max_poisson_qps", None, probes=tuple(probes))
    if probe(hi_qps):
        return SearchOutcome("max_poisson_qps", hi_qps, saturated=True, probes=tuple(probes))

    # bisect on the grid lo + k*resolution
    k_lo, k_hi = 0, int((hi_qps - lo_qps) // resolution)
    while k_hi - k_lo > 1:
        k_mid = (k_lo + k_hi) // 2
        if probe(lo_qps + k_mid * resolution):
            k_lo = k_mid
        else:
            k_hi = k_mid
    best = lo_qps + k_lo * resolution
    anomaly = any(
        (not ok) and qps < best for qps, ok in probes
    ) or any(ok and qps > best for qps, ok in probes)
    return SearchOutcome("max_poisson_qps", best, anomaly=anomaly, probes=tuple(probes))


def search_max_streams(sut_profile, settings: TestSettings, hi_n: int,
                       virtual: bool = True) -> SearchOutcome:
    """Largest per-query stream count N for which the multistream run is valid."""
    from . import engine

    if settings.scenario is not ScenarioKind.MULTI_STREAM:
        raise ValidationError(["search_max_streams requires multistream settings"])
    if hi_n < 1:
        raise ValidationError(["hi_n must be >= 1"])

    probes: list[tuple[int, bool]] = []

    def probe(n: int) -> bool:
        s = settings.with_(samples_per_query=n)
        res = engine.run(s, sut_profile, virtual=virtual)
        probes.append((n, res.valid))
        return res.valid

    if not probe(1):
        return SearchOutcome("max_streams", None, probes=tuple(probes))
    if probe(hi_n):
        return SearchOutcome("max_streams", hi_n, saturated=True, probes=tuple(probes))
    lo, hi = 1, hi_n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid):
            lo = mid
        else:
            hi = mid
    anomaly = any((not ok) and n < lo for n, ok in probes) or any(ok and n > lo for n, ok in probes)
    return SearchOutcome("max_streams", lo, anomaly=anomaly, probes=tuple(probes))
