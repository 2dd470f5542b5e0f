#!/usr/bin/env python3
"""Run all four scenarios against a simulated SUT in virtual time.

Usage: python scripts/demo_all_scenarios.py [sim-profile]
"""
import sys
import time

sys.path.insert(0, "src")

from loadgauge import engine
from loadgauge.core import ScenarioKind, TestSettings
from loadgauge.metrics import run_server_protocol
from loadgauge.simsut import parse_profile

MS = 1_000_000


def main():
    profile = parse_profile(sys.argv[1] if len(sys.argv) > 1 else "sim:batch:0.4ms:0.1ms:1")
    configs = {
        "single_stream": TestSettings(scenario=ScenarioKind.SINGLE_STREAM),
        "multi_stream": TestSettings(scenario=ScenarioKind.MULTI_STREAM,
                                     samples_per_query=8, loaded_sample_count=1024,
                                     tail_percentile=0.99),
        "server": TestSettings(scenario=ScenarioKind.SERVER, target_qps=1500.0),
        "offline": TestSettings(scenario=ScenarioKind.OFFLINE),
    }
    print(f"SUT: {profile.spec()}\n")
    for name, settings in configs.items():
        t0 = time.perf_counter()
        if settings.scenario is ScenarioKind.SERVER:
            result, _ = run_server_protocol(settings, profile)
        else:
            result = engine.run(settings, profile)
        wall = time.perf_counter() - t0
        status = "VALID" if result.valid else "INVALID"
        metric = "n/a" if result.metric_value is None else f"{result.metric_value:,.2f}"
        print(f"{name:14s} {status:8s} {result.metric_name} = {metric:>14s}   "
              f"({result.issued_query_count:,} queries simulated in {wall:.2f} s wall)")
        for d in result.diagnostics:
            print(f"{'':14s} - {d}")


if __name__ == "__main__":
    main()
