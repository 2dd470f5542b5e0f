import threading
import time

import numpy as np
import pytest

from loadgauge import engine
from loadgauge.core import ModeKind, Query, ScenarioKind, TestSettings
from loadgauge.engine import NullSut, SutContract, _WallRecorder
from loadgauge.planner import plan_for_scenario
from loadgauge.schedule import build_trace
from loadgauge.simsut import BatchQueue, ConstantLatency, Instant, LognormalLatency

MS = 1_000_000
SECOND = 1_000_000_000


class TestVirtualSingleStream:
    def test_constant_latency_p90_exact(self):
        s = TestSettings(scenario=ScenarioKind.SINGLE_STREAM)
        res = engine.run(s, ConstantLatency(5 * MS))
        assert res.valid
        assert res.metric_value == 5 * MS  # every latency is exactly 5 ms
        assert res.issued_query_count == 12000  # 60 s / 5 ms
        assert res.duration_ns == 60 * SECOND

    def test_cyclic_reissue_extends_past_query_floor(self):
        s = TestSettings(scenario=ScenarioKind.SINGLE_STREAM)
        res = engine.run(s, ConstantLatency(5 * MS))
        assert res.issued_query_count > plan_for_scenario(s).effective_min_queries

    def test_short_duration_uses_query_floor(self):
        s = TestSettings(scenario=ScenarioKind.SINGLE_STREAM, min_duration_ns=SECOND)
        res = engine.run(s, ConstantLatency(5 * MS))
        assert res.issued_query_count == 1024  # floor dominates 200 queries/s
        assert res.duration_ns >= SECOND

    def test_closed_loop_no_overlap(self):
        s = TestSettings(scenario=ScenarioKind.SINGLE_STREAM, min_duration_ns=SECOND)
        res = engine.run(s, LognormalLatency(2 * MS, 0.5, seed=5))
        raw = res.raw
        # next issue never precedes the prior completion
        assert np.all(raw.issue_ns[1:] >= raw.complete_ns[:-1])


class TestVirtualServer:
    def test_open_loop_issues_on_schedule(self):
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=2000.0)
        res = engine.run(s, ConstantLatency(5 * MS))
        raw = res.raw
        assert np.array_equal(raw.issue_ns, raw.sched_ns)
        assert res.valid

    def test_violation_fraction_under_overload(self):
        # capacity 1000/s at lambda 2000/s: the backlog blows the bound
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=2000.0,
                         tail_percentile=0.90, min_duration_ns=5 * SECOND)
        res = engine.run(s, BatchQueue(MS, 0, 1))
        assert not res.valid
        assert res.violation_fraction > 0.5

    def test_measured_rate_tracks_lambda(self):
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=1000.0)
        res = engine.run(s, ConstantLatency(MS))
        assert res.metric_value == pytest.approx(1000.0, rel=0.01)


class TestVirtualMultiStream:
    def test_all_queries_overrun_one_tick(self):
        s = TestSettings(scenario=ScenarioKind.MULTI_STREAM, samples_per_query=2,
                         loaded_sample_count=64)
        res = engine.run(s, ConstantLatency(60 * MS))
        assert not res.valid
        assert res.violation_fraction == 1.0
        assert np.all(res.raw.skipped == 1)

    def test_exact_interval_service_no_skips(self):
        # service == interval: completion lands exactly on the next tick
        s = TestSettings(scenario=ScenarioKind.MULTI_STREAM, samples_per_query=96,
                         loaded_sample_count=1024, tail_percentile=0.90,
                         min_duration_ns=SECOND)
        res = engine.run(s, BatchQueue(500_000, 2 * MS, 1))
        assert res.valid
        assert res.violation_fraction == 0.0

    def test_grid_slips_by_whole_intervals(self):
        s = TestSettings(scenario=ScenarioKind.MULTI_STREAM, samples_per_query=2,
                         loaded_sample_count=64, tail_percentile=0.90,
                         min_duration_ns=SECOND)
        res = engine.run(s, ConstantLatency(70 * MS))
        raw = res.raw
        ticks = raw.sched_ns
        assert np.all((np.diff(ticks) % (50 * MS)) == 0)
        assert np.all(np.diff(ticks) == 100 * MS)  # 70 ms service -> skip one tick


class TestVirtualOffline:
    def test_batch_queue_throughput(self):
        s = TestSettings(scenario=ScenarioKind.OFFLINE)
        res = engine.run(s, BatchQueue(100_000, 0, 1))
        assert res.valid
        assert res.metric_value == pytest.approx(10000.0, rel=0.001)
        assert res.duration_ns == 60 * SECOND  # padded to the floor
        assert res.active_window_ns == 2_457_600_000  # metric uses the active window

    def test_offline_sample_floor_enforced(self):
        s = TestSettings(scenario=ScenarioKind.OFFLINE, samples_per_query=50_000)
        res = engine.run(s, BatchQueue(100_000, 0, 1))
        assert res.raw.samples_per_query == 50_000  # grows past the 24,576 floor


class TestAccuracyMode:
    def test_accuracy_logs_every_query(self):
        s = TestSettings(scenario=ScenarioKind.SINGLE_STREAM, mode=ModeKind.ACCURACY,
                         loaded_sample_count=512)
        res = engine.run(s, ConstantLatency(5 * MS))
        assert res.issued_query_count == 512
        assert len(res.raw.accuracy_records) == 512
        covered = {s_ for _, s_, _, _ in res.raw.accuracy_records}
        assert covered == set(range(512))


class TestVirtualDeterminism:
    def test_identical_runs_bit_identical(self):
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=500.0,
                         tail_percentile=0.90)
        a = engine.run(s, LognormalLatency(3 * MS, 0.3, seed=9))
        b = engine.run(s, LognormalLatency(3 * MS, 0.3, seed=9))
        assert np.array_equal(a.raw.issue_ns, b.raw.issue_ns)
        assert np.array_equal(a.raw.complete_ns, b.raw.complete_ns)
        assert a.metric_value == b.metric_value


class _RecordingSut(SutContract):
    """In-process SUT completing inline; records what it was asked."""

    name = "recording"

    def __init__(self):
        self.loaded = []
        self.issued = []
        self.flushed = False

    def load_samples(self, indices):
        self.loaded = list(indices)

    def issue_query(self, query: Query):
        self.issued.append(query.query_id)
        for rid in query.response_ids:
            self.ctx.complete(rid)

    def flush(self):
        self.flushed = True


class TestWallClock:
    def _settings(self, **kw):
        base = dict(scenario=ScenarioKind.SINGLE_STREAM, min_duration_ns=200 * MS,
                    min_query_count_override=50, loaded_sample_count=32)
        base.update(kw)
        return TestSettings(**base)

    def test_single_stream_against_recording_sut(self):
        s = self._settings()
        res = engine.run(s, _RecordingSut(), virtual=False)
        assert res.valid
        assert res.issued_query_count >= 50
        assert res.completed_query_count == res.issued_query_count

    def test_sim_profile_on_wall_clock(self):
        s = self._settings(min_query_count_override=20)
        res = engine.run(s, ConstantLatency(2 * MS), virtual=False)
        assert res.valid
        # timer jitter only inflates latency, never deflates it
        assert res.metric_value >= 2 * MS
        assert res.metric_value < 12 * MS

    def test_server_open_loop_wall(self):
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=2000.0,
                         tail_percentile=0.90, min_duration_ns=SECOND,
                         min_query_count_override=1, loaded_sample_count=32)
        res = engine.run(s, NullSut(workers=2), virtual=False)
        assert res.completed_query_count == res.issued_query_count
        dev = res.raw.issue_ns - res.raw.sched_ns
        assert int(np.percentile(dev, 99)) < 20 * MS  # sane scheduling, loose bound

    def test_incomplete_run_is_invalid(self):
        class Deaf(SutContract):
            name = "deaf"

            def issue_query(self, query):
                pass  # never completes anything

        s = TestSettings(scenario=ScenarioKind.OFFLINE, samples_per_query=4,
                         min_duration_ns=0, loaded_sample_count=8,
                         min_query_count_override=1)
        res = engine.run(s, Deaf(), virtual=False, grace_ns=200 * MS)
        assert not res.valid
        assert any("never completed" in d for d in res.diagnostics)


class TestCompletionContract:
    def _recorder(self, n=16, spq=1):
        return _WallRecorder(n, spq, t0=0)

    def test_out_of_order_completions(self):
        rec = self._recorder(4)
        for slot in range(4):
            rec.mark_issue(slot, 0, slot)
        for rid in (3, 1, 0, 2):
            assert rec.complete(rid)
        assert all(rec.cq[i] >= 0 for i in range(4))

    def test_duplicate_rejected_first_retained(self):
        rec = self._recorder(2)
        rec.mark_issue(0, 0, 0)
        assert rec.complete(0)
        first = rec.cq[0]
        assert not rec.complete(0)
        assert rec.cq[0] == first
        assert rec.violations == 1

    def test_unknown_response_id_rejected(self):
        rec = self._recorder(2)
        rec.mark_issue(0, 0, 0)
        assert not rec.complete(99)
        assert not rec.complete(-1)
        assert not rec.complete(1)  # slot 1 never issued
        assert rec.violations == 3

    def test_multi_sample_query_completes_on_last(self):
        rec = self._recorder(2, spq=3)
        rec.mark_issue(0, 0, 0)
        assert rec.complete(1)
        assert rec.cq[0] == -1
        assert rec.complete(0)
        assert rec.cq[0] == -1
        assert rec.complete(2)
        assert rec.cq[0] >= 0

    def test_concurrent_stress_zero_lost(self):
        n = 100_000
        rec = self._recorder(n)
        for slot in range(n):
            rec.mark_issue(slot, 0, 0)
        chunks = np.array_split(np.random.default_rng(0).permutation(n), 8)
        errs = []

        def worker(ids):
            try:
                for rid in ids:
                    if not rec.complete(int(rid)):
                        errs.append(rid)
            except Exception as e:  # pragma: no cover
                errs.append(e)

        threads = [threading.Thread(target=worker, args=(c,)) for c in chunks]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errs
        assert rec.completed_count() == n
        assert rec.violations == 0


class TestNullSutConservation:
    def test_issued_equals_completed(self):
        s = TestSettings(scenario=ScenarioKind.SERVER, target_qps=5000.0,
                         tail_percentile=0.90, min_duration_ns=SECOND,
                         min_query_count_override=1, loaded_sample_count=32,
                         unsafe_override=True)
        res = engine.run(s, NullSut(workers=8), virtual=False)
        assert res.issued_query_count == res.completed_query_count
        assert res.protocol_violations == 0
