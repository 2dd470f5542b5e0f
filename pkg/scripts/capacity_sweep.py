#!/usr/bin/env python3
"""Sweep Poisson rates across a queueing SUT's capacity and print the cliff.

Shows why the sustainable-rate metric needs the repeated-run minimum: near
saturation the five runs disagree before they all fail.

Usage: python scripts/capacity_sweep.py [service_us] [parallelism]
"""
import sys

sys.path.insert(0, "src")

from loadgauge.core import ScenarioKind, TestSettings
from loadgauge.metrics import run_server_protocol
from loadgauge.simsut import BatchQueue


def main():
    service_us = float(sys.argv[1]) if len(sys.argv) > 1 else 200.0
    parallelism = int(sys.argv[2]) if len(sys.argv) > 2 else 1
    capacity = parallelism / (service_us / 1e6)
    prof = BatchQueue(int(service_us * 1000), 0, parallelism)
    print(f"SUT {prof.spec()}  (analytic capacity {capacity:,.0f} qps)\n")
    print(f"{'lambda':>10s} {'utilisation':>12s} {'valid runs':>10s} {'agg':>8s} "
          f"{'worst violation%':>17s}")
    for frac in (0.5, 0.8, 0.9, 0.95, 0.99, 1.0, 1.02, 1.1, 1.5):
        lam = capacity * frac
        settings = TestSettings(scenario=ScenarioKind.SERVER, target_qps=lam,
                                tail_percentile=0.90)
        agg, runs = run_server_protocol(settings, prof)
        ok = sum(1 for r in runs if r.valid)
        worst = max(r.violation_fraction for r in runs)
        print(f"{lam:10,.0f} {frac:12.2f} {ok:7d}/{len(runs)} "
              f"{'PASS' if agg.valid else 'fail':>8s} {100 * worst:16.3f}%")


if __name__ == "__main__":
    main()
