import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from loadgauge.core import LatencyRecord, ScenarioKind, TestSettings, ValidationError
from loadgauge.metrics import (
    AggregationError,
    aggregate_server_runs,
    evaluate_records,
    percentile,
)

from .oracles import nearest_rank_percentile

MS = 1_000_000
SECOND = 1_000_000_000


class TestPercentile:
    def test_singleton(self):
        assert percentile([10], 0.9) == 10

    def test_nearest_rank_1_to_100(self):
        values = list(range(1, 101))
        assert percentile(values, 0.90) == 90
        assert percentile(values, 0.99) == 99
        assert percentile(values, 0.50) == 50

    def test_empty_is_domain_error(self):
        with pytest.raises(ValidationError):
            percentile([], 0.9)

    @given(
        values=st.lists(st.integers(min_value=0, max_value=10**9), min_size=1, max_size=60),
        p=st.floats(min_value=0.01, max_value=0.99),
    )
    @hyp_settings(max_examples=200, deadline=None)
    def test_matches_exhaustive_oracle(self, values, p):
        assert percentile(values, p) == nearest_rank_percentile(values, p)

    @given(values=st.lists(st.integers(min_value=0, max_value=10**6), min_size=1, max_size=40))
    @hyp_settings(max_examples=100, deadline=None)
    def test_permutation_invariant_and_monotone_in_p(self, values):
        rng = np.random.default_rng(0)
        shuffled = list(rng.permutation(values))
        ps = [0.1, 0.5, 0.9, 0.99]
        outs = [percentile(values, p) for p in ps]
        assert outs == [percentile(shuffled, p) for p in ps]
        assert outs == sorted(outs)


def _server_records(total, over, bound_ns, base_issue=0):
    recs = []
    for i in range(total):
        lat = bound_ns + MS if i < over else bound_ns - MS
        recs.append(LatencyRecord(query_id=i, issue_ns=base_issue + i * 1000,
                                  complete_ns=base_issue + i * 1000 + lat))
    return recs


class TestEvaluateRecords:
    def test_server_budget_edge_exact(self):
        s = TestSettings(scenario=ScenarioKind.SERVER)
        # exactly 1.0% violations passes (<= budget)
        res = evaluate_records(s, _server_records(1000, 10, s.latency_bound_ns))
        assert res.valid and res.violation_fraction == 0.01
        # one more violation crosses the budget
        res = evaluate_records(s, _server_records(1000, 11, s.latency_bound_ns))
        assert not res.valid

    def test_server_paper_scale_edge(self):
        s = TestSettings(scenario=ScenarioKind.SERVER)
        res = evaluate_records(s, _server_records(270336, 2700, s.latency_bound_ns))
        assert res.valid  # 0.99876% under the 1% budget
        res = evaluate_records(s, _server_records(270336, 2704, s.latency_bound_ns))
        assert not res.valid  # 1.0002% over

    def test_translation_budget_three_percent(self):
        s = TestSettings(scenario=ScenarioKind.SERVER, qos_violation_budget=0.03)
        res = evaluate_records(s, _server_records(1000, 30, s.latency_bound_ns))
        assert res.valid
        res = evaluate_records(s, _server_records(1000, 31, s.latency_bound_ns))
        assert not res.valid

    def test_multistream_skip_budget(self):
        s = TestSettings(scenario=ScenarioKind.MULTI_STREAM, samples_per_query=2,
                         loaded_sample_count=16)
        recs = [
            LatencyRecord(query_id=i, issue_ns=i * 50 * MS,
                          complete_ns=i * 50 * MS + 10 * MS,
                          skipped_intervals=1 if i < 10 else 0)
            for i in range(1000)
        ]
        assert evaluate_records(s, recs).valid
        recs[10] = LatencyRecord(query_id=10, issue_ns=0, complete_ns=MS, skipped_intervals=2)
        assert not evaluate_records(s, recs).valid

    def test_offline_throughput(self):
        s = TestSettings(scenario=ScenarioKind.OFFLINE)
        rec = [LatencyRecord(query_id=0, issue_ns=0, complete_ns=2_457_600_000)]
        res = evaluate_records(s, rec)
        res_raw = res.raw
        res_raw.samples_per_query = 24576
        from loadgauge.metrics import evaluate_run

        res = evaluate_run(res_raw, enforce_floors=False)
        assert res.metric_value == pytest.approx(10000.0)

    def test_violation_monotonicity(self):
        s = TestSettings(scenario=ScenarioKind.SERVER)
        base = _server_records(1000, 5, s.latency_bound_ns)
        f0 = evaluate_records(s, base).violation_fraction
        worse = base[:-1] + [
            LatencyRecord(query_id=999, issue_ns=0,
                          complete_ns=s.latency_bound_ns + 2 * MS)
        ]
        assert evaluate_records(s, worse).violation_fraction >= f0


def _result(metric, valid=True, digest=7):
    from loadgauge.core import RunResult

    return RunResult(
        scenario=ScenarioKind.SERVER, metric_name="max_poisson_qps",
        metric_value=metric, valid=valid, violation_fraction=0.0,
        duration_ns=60 * SECOND, issued_query_count=1000,
        completed_query_count=1000, settings_digest=digest,
    )


class TestAggregateServerRuns:
    def test_identical_runs(self):
        agg = aggregate_server_runs([_result(2000.0)] * 5, expected_runs=5)
        assert agg.valid and agg.metric_value == 2000.0

    def test_minimum_of_five(self):
        vals = [2011.0, 1998.0, 2005.0, 2003.0, 2007.0]
        agg = aggregate_server_runs([_result(v) for v in vals], expected_runs=5)
        assert agg.metric_value == 1998.0

    def test_any_invalid_member_invalidates(self):
        runs = [_result(2000.0)] * 4 + [_result(2100.0, valid=False)]
        agg = aggregate_server_runs(runs, expected_runs=5)
        assert not agg.valid

    def test_mixed_digests_rejected(self):
        with pytest.raises(AggregationError):
            aggregate_server_runs([_result(1.0, digest=1), _result(2.0, digest=2)])

    def test_too_few_runs_rejected(self):
        with pytest.raises(AggregationError):
            aggregate_server_runs([_result(1.0)] * 3, expected_runs=5)

    @given(st.lists(st.floats(min_value=1.0, max_value=1e6), min_size=5, max_size=9))
    @hyp_settings(max_examples=100, deadline=None)
    def test_equals_brute_force_minimum_all_permutations(self, vals):
        runs = [_result(v) for v in vals]
        rng = np.random.default_rng(1)
        for _ in range(3):
            perm = [runs[i] for i in rng.permutation(len(runs))]
            agg = aggregate_server_runs(perm, expected_runs=5)
            assert agg.metric_value == min(vals)
