import numpy as np
import pytest

from loadgauge import engine
from loadgauge.core import ScenarioKind, TestSettings
from loadgauge.planner import plan_for_scenario
from loadgauge.schedule import build_trace
from loadgauge.simsut import ConstantLatency
from loadgauge.tcp import ProfileTcpServer, TcpSut

MS = 1_000_000
SECOND = 1_000_000_000


@pytest.fixture
def settings():
    return TestSettings(scenario=ScenarioKind.SINGLE_STREAM, min_duration_ns=SECOND,
                        loaded_sample_count=64)


def test_virtual_tcp_matches_native_profile(settings):
    trace = build_trace(settings, plan_for_scenario(settings))
    server = ProfileTcpServer(ConstantLatency(2 * MS), settings, trace).start()
    try:
        native = engine.run(settings, ConstantLatency(2 * MS), trace=trace)
        sut = TcpSut("127.0.0.1", server.port)
        remote = engine.run(settings, sut, trace=trace)
        assert remote.metric_value == native.metric_value
        assert remote.issued_query_count == native.issued_query_count
        assert np.array_equal(remote.raw.complete_ns, native.raw.complete_ns)
    finally:
        server.stop()


def test_wall_tcp_round_trip(settings):
    s = settings.with_(min_duration_ns=100 * MS, min_query_count_override=20)
    trace = build_trace(s, plan_for_scenario(s))
    server = ProfileTcpServer(ConstantLatency(1 * MS), s, trace).start()
    try:
        sut = TcpSut("127.0.0.1", server.port)
        res = engine.run(s, sut, trace=trace, virtual=False)
        assert res.completed_query_count == res.issued_query_count >= 20
        # socket round trip puts a floor on observed latency
        assert res.metric_value > 0
    finally:
        server.stop()


def test_accuracy_payloads_cross_the_wire(settings):
    from loadgauge.compliance import run_accuracy_reference
    from loadgauge.core import ModeKind

    acc = settings.with_(mode=ModeKind.ACCURACY)
    trace = build_trace(acc, plan_for_scenario(acc))
    server = ProfileTcpServer(ConstantLatency(2 * MS), acc, trace).start()
    try:
        sut = TcpSut("127.0.0.1", server.port)
        res = engine.run(acc, sut, trace=trace)
        native = engine.run(acc, ConstantLatency(2 * MS), trace=trace)
        assert sorted(res.raw.accuracy_records) == sorted(native.raw.accuracy_records)
    finally:
        server.stop()
