"""Acceptance suite: one test per release criterion, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line
per criterion.
"""
from __future__ import annotations

import contextlib
import json
import math
import time

import numpy as np
import pytest

from loadgauge import engine, metrics
from loadgauge.compliance import (
    accuracy_spot_check,
    caching_probe,
    run_accuracy_reference,
    run_all,
    seed_variants,
)
from loadgauge.core import LatencyRecord, ModeKind, ScenarioKind, TestSettings
from loadgauge.logio import check_submission, write_bundle, write_run_log
from loadgauge.metrics import aggregate_server_runs, evaluate_records, search_max_qps, search_max_streams
from loadgauge.planner import norm_inv, plan_for_scenario, required_query_count
from loadgauge.schedule import build_trace
from loadgauge.simsut import (
    BatchQueue,
    CachingSut,
    ConstantLatency,
    LognormalLatency,
    ModeCheat,
    SeedCheat,
)

from .oracles import ks_critical_1pct, ks_statistic_exponential, norm_inv_bisect

MS = 1_000_000
SECOND = 1_000_000_000
WALL = "2026-01-01T00:00:00.000000Z"


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE[{name}] FAIL")
        raise
    print(f"ACCEPTANCE[{name}] PASS")


def test_planner_reproduction():
    with criterion("planner-reproduction"):
        required_query_count(0.99, 0.99)  # warm the import path before timing
        t0 = time.perf_counter()
        plan = required_query_count(0.99, 0.99)
        elapsed = time.perf_counter() - t0
        assert plan.raw_query_count == 262742
        assert plan.rounded_query_count == 270336 == 33 * 2**13
        assert required_query_count(0.97, 0.99).rounded_query_count == 90112
        assert elapsed < 1e-3


def test_norm_inv_accuracy():
    with criterion("norm-inv-accuracy"):
        rng = np.random.default_rng(99)
        ps = np.exp(rng.uniform(math.log(1e-9), math.log(1.0 - 1e-9), size=1000))
        t0 = time.perf_counter()
        worst = max(abs(norm_inv(float(p)) - norm_inv_bisect(float(p))) for p in ps)
        elapsed = time.perf_counter() - t0
        assert worst <= 1e-9
        assert elapsed < 1.0


def test_scenario_floors():
    with criterion("scenario-floors"):
        ss = TestSettings(scenario=ScenarioKind.SINGLE_STREAM)
        assert plan_for_scenario(ss).effective_min_queries == 1024
        off = TestSettings(scenario=ScenarioKind.OFFLINE)
        plan = plan_for_scenario(off)
        assert plan.effective_min_queries == 1
        assert plan.offline_sample_budget == 24576


def test_constant_latency_oracle():
    with criterion("constant-latency-oracle"):
        t0 = time.perf_counter()
        ss = TestSettings(scenario=ScenarioKind.SINGLE_STREAM)
        res = engine.run(ss, ConstantLatency(5 * MS))
        assert res.valid
        assert res.metric_value == 5 * MS  # exact
        assert time.perf_counter() - t0 < 5.0

        t0 = time.perf_counter()
        off = TestSettings(scenario=ScenarioKind.OFFLINE)
        res = engine.run(off, BatchQueue(100_000, 0, 1))  # 10,000 samples/s
        assert res.valid
        assert res.metric_value == pytest.approx(10000.0, rel=0.001)
        assert time.perf_counter() - t0 < 5.0


def test_poisson_fidelity():
    with criterion("poisson-fidelity"):
        lam = 1000.0
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=lam,
                         tail_percentile=0.99)
        trace = build_trace(s, plan_for_scenario(s))
        assert trace.n_queries >= 10**5
        gaps_s = np.diff(np.concatenate([[0], trace.sched_ns])) / 1e9
        d = ks_statistic_exponential(gaps_s.tolist(), lam)
        assert d < ks_critical_1pct(len(gaps_s))
        rate = (trace.n_queries - 1) / (float(trace.sched_ns[-1] - trace.sched_ns[0]) / 1e9)
        assert abs(rate - lam) / lam < 0.01


def _server_records(total, over, bound_ns):
    return [
        LatencyRecord(query_id=i, issue_ns=i * 1000,
                      complete_ns=i * 1000 + (bound_ns + MS if i < over else bound_ns - MS))
        for i in range(total)
    ]


def test_qos_edges():
    with criterion("qos-edges"):
        s = TestSettings(scenario=ScenarioKind.SERVER)
        at_budget = evaluate_records(s, _server_records(1000, 10, s.latency_bound_ns))
        assert at_budget.valid and at_budget.violation_fraction == 0.01
        over_budget = evaluate_records(s, _server_records(1000, 11, s.latency_bound_ns))
        assert not over_budget.valid

        ms = TestSettings(scenario=ScenarioKind.MULTI_STREAM, samples_per_query=2,
                          loaded_sample_count=64)
        res = engine.run(ms, ConstantLatency(60 * MS))
        assert not res.valid
        assert res.violation_fraction == 1.0


def test_search_drivers():
    with criterion("search-drivers"):
        t0 = time.perf_counter()
        ms = TestSettings(scenario=ScenarioKind.MULTI_STREAM, loaded_sample_count=1024)
        streams = search_max_streams(BatchQueue(500_000, 2 * MS, 1), ms, hi_n=256)
        assert streams.value == 96  # analytic: 2 + 0.5 N <= 50
        assert time.perf_counter() - t0 < 30.0

        t0 = time.perf_counter()
        sv = TestSettings(scenario=ScenarioKind.SERVER, target_qps=1000.0)
        qps = search_max_qps(BatchQueue(200_000, 0, 1), sv, 100.0, 20000.0, 50.0)
        assert qps.value is not None
        assert abs(qps.value - 5000.0) <= 50.0  # within one resolution step
        assert time.perf_counter() - t0 < 30.0


def test_five_run_minimum():
    with criterion("five-run-minimum"):
        from loadgauge.core import RunResult

        rng = np.random.default_rng(5)
        for _ in range(20):
            vals = rng.uniform(500.0, 5000.0, size=5)
            runs = [
                RunResult(scenario=ScenarioKind.SERVER, metric_name="max_poisson_qps",
                          metric_value=float(v), valid=True, violation_fraction=0.0,
                          duration_ns=60 * SECOND, issued_query_count=1,
                          completed_query_count=1, settings_digest=1)
                for v in vals
            ]
            agg = aggregate_server_runs(runs, expected_runs=5)
            assert agg.metric_value == min(float(v) for v in vals)
            bad = runs[:2] + [runs[2].__class__(**{**runs[2].__dict__, "valid": False,
                                                   "records": (), "raw": None})] + runs[3:]
            assert not aggregate_server_runs(bad, expected_runs=5).valid


def test_compliance_efficacy():
    with criterion("compliance-efficacy"):
        t0 = time.perf_counter()
        s = TestSettings(scenario=ScenarioKind.SINGLE_STREAM, min_duration_ns=SECOND,
                         loaded_sample_count=2048, rng_seed=0xACCE97)

        assert not caching_probe(s, CachingSut(10 * MS, 1 * MS, 8)).passed
        assert caching_probe(s, ConstantLatency(3 * MS)).passed

        cheat_log, _ = run_accuracy_reference(s, ModeCheat())
        cheat_verdict = accuracy_spot_check(s, ModeCheat(), cheat_log)
        assert not cheat_verdict.passed
        assert cheat_verdict.evidence["mismatch_count"] >= 1
        honest_log, _ = run_accuracy_reference(s, ConstantLatency(2 * MS))
        honest_verdict = accuracy_spot_check(s, ConstantLatency(2 * MS), honest_log)
        assert honest_verdict.passed
        assert honest_verdict.evidence["mismatch_count"] == 0

        official = build_trace(s, plan_for_scenario(s))
        assert not seed_variants(s, SeedCheat(official.trace_digest()), [71, 72]).passed

        rng = np.random.default_rng(17)
        honest = []
        for _ in range(7):
            honest.append(ConstantLatency(int(rng.integers(1, 9)) * MS))
        for _ in range(7):
            honest.append(LognormalLatency(int(rng.integers(2, 7)) * MS,
                                           float(rng.uniform(0.05, 0.5)),
                                           seed=int(rng.integers(1, 10_000))))
        for _ in range(6):
            honest.append(BatchQueue(int(rng.integers(1, 5)) * MS,
                                     int(rng.integers(0, 3)) * MS, 1))
        assert len(honest) == 20
        for prof in honest:
            for verdict in run_all(s, prof, alternate_seeds=[311, 313]):
                assert verdict.passed, (prof, verdict.test_name, verdict.evidence)
        assert time.perf_counter() - t0 < 60.0


def test_checker_round_trip(tmp_path):
    with criterion("checker-round-trip"):
        prof = ConstantLatency(2 * MS)
        bundles = []
        for scen, kw in (
            (ScenarioKind.SINGLE_STREAM, {}),
            (ScenarioKind.OFFLINE, {}),
            (ScenarioKind.MULTI_STREAM, dict(samples_per_query=4, tail_percentile=0.90,
                                             loaded_sample_count=100_000)),
            (ScenarioKind.SERVER, dict(target_qps=400.0, tail_percentile=0.90,
                                       loaded_sample_count=30_000)),
        ):
            s = TestSettings(scenario=scen, min_duration_ns=SECOND,
                             loaded_sample_count=kw.pop("loaded_sample_count", 2048), **kw)
            if scen is ScenarioKind.SERVER:
                agg, runs = metrics.run_server_protocol(s, prof)
            else:
                agg, runs = None, [engine.run(s, prof)]
            acc_log, acc_res = run_accuracy_reference(s, prof)
            verdicts = run_all(s, prof, alternate_seeds=[5, 6], accuracy_log=acc_log)
            bdir = write_bundle(tmp_path, f"const_{scen.value}", s, runs,
                                accuracy_result=acc_res, verdicts=verdicts,
                                aggregate=agg, wall_clock_iso=WALL)
            report = check_submission(bdir)
            assert report.exit_code == 0, report.to_text()
            assert report.violations == []
            bundles.append(bdir)

        # single-byte mutation of a summary metric: exit 1, rule named
        victim = bundles[0] / "run_1.log"
        lines = victim.read_text().splitlines()
        rec = json.loads(lines[-1])
        rec["payload"]["metric_value"] += 1.0
        lines[-1] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        victim.write_text("\n".join(lines) + "\n")
        report = check_submission(bundles[0])
        assert report.exit_code == 1
        assert "metric_mismatch" in {v.rule for v in report.violations}

        # deleting a required file: exit 1, rule named
        (bundles[1] / "accuracy.log").unlink()
        report = check_submission(bundles[1])
        assert report.exit_code == 1
        assert any(v.rule == "missing_file" and v.file == "accuracy.log"
                   for v in report.violations)


def test_determinism(tmp_path):
    with criterion("determinism"):
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=500.0,
                         tail_percentile=0.90, rng_seed=1234,
                         loaded_sample_count=2048)
        a = write_run_log(tmp_path / "a.log",
                          engine.run(s, LognormalLatency(3 * MS, 0.3, seed=8)),
                          wall_clock_iso="2026-01-01T00:00:00.000000Z")
        b = write_run_log(tmp_path / "b.log",
                          engine.run(s, LognormalLatency(3 * MS, 0.3, seed=8)),
                          wall_clock_iso="2026-03-03T03:03:03.000000Z")
        la, lb = a.read_text().splitlines(), b.read_text().splitlines()
        assert la[1:] == lb[1:]  # byte-identical bodies
        ha, hb = json.loads(la[0]), json.loads(lb[0])
        assert ha["payload"].pop("wall_clock_utc") != hb["payload"].pop("wall_clock_utc")
        assert ha == hb  # header identical apart from the wall-clock field


def test_hot_path_contract():
    with criterion("hot-path-contract"):
        lam = 50_000.0
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=lam,
                         tail_percentile=0.90, min_duration_ns=10 * SECOND,
                         min_query_count_override=1, loaded_sample_count=64)
        res = engine.run(s, engine.NullSut(workers=8), virtual=False)
        raw = res.raw
        assert raw.issued >= lam * 10 * 0.98
        # zero lost completions across 8 concurrent completion threads
        assert res.completed_query_count == res.issued_query_count
        assert res.protocol_violations == 0
        deviation = raw.issue_ns - raw.sched_ns
        p999 = int(np.percentile(deviation, 99.9))
        print(f"  issue deviation p99.9 = {p999/1e6:.3f} ms "
              f"(median {int(np.median(deviation))/1e3:.1f} us, "
              f"max {deviation.max()/1e6:.3f} ms)")
        assert p999 <= 1 * MS
