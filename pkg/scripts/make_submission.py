#!/usr/bin/env python3
"""Produce a complete submission bundle for a simulated SUT, then audit it.

Usage: python scripts/make_submission.py <out_dir> [scenario] [sim-profile]
"""
import sys

sys.path.insert(0, "src")

from loadgauge import engine
from loadgauge.compliance import run_accuracy_reference, run_all
from loadgauge.core import ScenarioKind, TestSettings
from loadgauge.logio import check_submission, write_bundle
from loadgauge.metrics import run_server_protocol
from loadgauge.simsut import parse_profile

SECOND = 1_000_000_000


def main():
    if len(sys.argv) < 2:
        raise SystemExit(__doc__)
    out = sys.argv[1]
    scenario = ScenarioKind.parse(sys.argv[2]) if len(sys.argv) > 2 else ScenarioKind.SINGLE_STREAM
    profile = parse_profile(sys.argv[3] if len(sys.argv) > 3 else "sim:constant:2ms")

    kwargs = dict(scenario=scenario, loaded_sample_count=2048)
    if scenario is ScenarioKind.SERVER:
        kwargs.update(target_qps=400.0, tail_percentile=0.90, loaded_sample_count=30_000)
    if scenario is ScenarioKind.MULTI_STREAM:
        kwargs.update(samples_per_query=4, tail_percentile=0.90)
    settings = TestSettings(**kwargs)

    if scenario is ScenarioKind.SERVER:
        aggregate, runs = run_server_protocol(settings, profile)
    else:
        aggregate, runs = None, [engine.run(settings, profile)]
    acc_log, acc_result = run_accuracy_reference(settings, profile)
    verdicts = run_all(settings, profile, alternate_seeds=[0xA17E41, 0xA17E42],
                       accuracy_log=acc_log)
    bdir = write_bundle(out, profile.spec().replace(":", "_"), settings, runs,
                        accuracy_result=acc_result, verdicts=verdicts,
                        aggregate=aggregate)
    print(f"bundle written: {bdir}")
    report = check_submission(bdir)
    print(report.to_text())
    raise SystemExit(report.exit_code)


if __name__ == "__main__":
    main()
