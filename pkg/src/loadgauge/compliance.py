"""Audit tests run against a submission's SUT.

Three probes, each deterministic given (settings, seeds, SUT definition):
response spot-checking against an accuracy-mode reference, caching detection
via unique-versus-duplicate sample streams, and alternate-seed sensitivity.
Thresholds are policy, not physics; they are recorded in every verdict.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from . import engine
from .core import ModeKind, RunResult, TestSettings, ValidationError
from .metrics import percentile
from .schedule import SamplingMode

SECOND = 1_000_000_000

TEST_ACCURACY_SPOT_CHECK = "accuracy_spot_check"
TEST_CACHING_PROBE = "caching_probe"
TEST_SEED_VARIANTS = "seed_variants"


class IncomparableError(ValueError):
    """The accuracy reference lacks indices the performance run logged."""


@dataclass(frozen=True)
class ComplianceConfig:
    log_fraction: float = 0.10     # per-query response-logging probability
    theta: float = 0.10            # caching-probe speedup tolerance
    theta_seed: float = 0.10       # seed-variant metric spread tolerance
    duplicate_subset_k: int = 8    # pool size for the duplicate-index part
    min_logged: int = 1            # spot check needs at least this many samples

    def to_dict(self) -> dict:
        return {
            "log_fraction": self.log_fraction,
            "theta": self.theta,
            "theta_seed": self.theta_seed,
            "duplicate_subset_k": self.duplicate_subset_k,
            "min_logged": self.min_logged,
        }


@dataclass(frozen=True)
class ComplianceVerdict:
    test_name: str
    passed: bool
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"test_name": self.test_name, "pass": self.passed, "evidence": self.evidence}


def run_accuracy_reference(
    settings: TestSettings, sut_profile, virtual: bool = True
) -> tuple[dict[int, int], RunResult]:
    """Accuracy-mode run over the whole loaded set; digest per sample index."""
    acc_settings = settings.with_(mode=ModeKind.ACCURACY)
    result = engine.run(acc_settings, sut_profile, virtual=virtual)
    log: dict[int, int] = {}
    for _, sidx, _, dg in result.raw.accuracy_records:
        log[sidx] = dg
    return log, result


def accuracy_spot_check(
    settings: TestSettings,
    sut_profile,
    accuracy_log: Mapping[int, int],
    config: ComplianceConfig = ComplianceConfig(),
    virtual: bool = True,
) -> ComplianceVerdict:
    """Performance run with randomly logged responses, diffed against the
    accuracy-mode digests for the same sample indices."""
    perf = settings.with_(mode=ModeKind.PERFORMANCE)
    result = engine.run(perf, sut_profile, virtual=virtual,
                        log_fraction=config.log_fraction)
    logged = result.raw.accuracy_records
    missing = sorted({s for _, s, _, _ in logged if s not in accuracy_log})
    if missing:
        raise IncomparableError(
            f"accuracy log lacks {len(missing)} sample indices needed "
            f"(first few: {missing[:5]})"
        )
    mismatches = sum(1 for _, s, _, d in logged if accuracy_log[s] != d)
    passed = mismatches == 0 and len(logged) >= config.min_logged
    return ComplianceVerdict(
        TEST_ACCURACY_SPOT_CHECK,
        passed,
        evidence={
            "config": config.to_dict(),
            "logged_count": len(logged),
            "issued_query_count": result.issued_query_count,
            "mismatch_count": mismatches,
            "mismatch_fraction": mismatches / len(logged) if logged else 0.0,
        },
    )


def _throughput_qps(result: RunResult) -> float:
    if result.active_window_ns <= 0:
        return 0.0
    return result.issued_query_count / (result.active_window_ns / SECOND)


def _p90_ns(result: RunResult) -> int:
    return percentile(result.raw.latencies_ns, 0.90)


def caching_probe(
    settings: TestSettings,
    sut_profile,
    config: ComplianceConfig = ComplianceConfig(),
    virtual: bool = True,
) -> ComplianceVerdict:
    """Two performance runs, unique sample indices versus duplicates drawn
    from a small subset; a caching SUT runs the duplicate part visibly faster."""
    unique = engine.run(settings, sut_profile, virtual=virtual,
                        sampling=SamplingMode.UNIQUE)
    dup = engine.run(settings, sut_profile, virtual=virtual,
                     sampling=SamplingMode.DUPLICATE_SUBSET,
                     subset_k=config.duplicate_subset_k)
    tput_a, tput_b = _throughput_qps(unique), _throughput_qps(dup)
    p90_a, p90_b = _p90_ns(unique), _p90_ns(dup)
    faster_tput = tput_b > tput_a * (1.0 + config.theta)
    faster_p90 = p90_b < p90_a * (1.0 - config.theta)
    return ComplianceVerdict(
        TEST_CACHING_PROBE,
        passed=not (faster_tput or faster_p90),
        evidence={
            "config": config.to_dict(),
            "throughput_unique_qps": tput_a,
            "throughput_duplicate_qps": tput_b,
            "throughput_ratio": tput_b / tput_a if tput_a else None,
            "p90_unique_ns": p90_a,
            "p90_duplicate_ns": p90_b,
            "p90_ratio": p90_b / p90_a if p90_a else None,
            "duplicate_faster_throughput": faster_tput,
            "duplicate_faster_p90": faster_p90,
        },
    )


def seed_variants(
    settings: TestSettings,
    sut_profile,
    alternate_seeds: Sequence[int],
    config: ComplianceConfig = ComplianceConfig(),
    virtual: bool = True,
) -> ComplianceVerdict:
    """Replace the official seed with alternates; performance must not depend
    on the official trace. Requires at least two alternates."""
    if len(alternate_seeds) < 2:
        raise ValidationError(["seed_variants needs at least 2 alternate seeds"])
    seeds = [settings.rng_seed, *alternate_seeds]
    per_seed: list[dict] = []
    values: list[float] = []
    all_valid = True
    for seed in seeds:
        result = engine.run(settings, sut_profile, virtual=virtual, run_seed=seed)
        all_valid &= result.valid
        if result.metric_value is None:
            all_valid = False
        else:
            values.append(result.metric_value)
        per_seed.append(
            {
                "seed": seed,
                "official": seed == settings.rng_seed,
                "metric_value": result.metric_value,
                "valid": result.valid,
            }
        )
    spread = (max(values) / min(values)) if values and min(values) > 0 else None
    passed = all_valid and spread is not None and spread <= 1.0 + config.theta_seed
    return ComplianceVerdict(
        TEST_SEED_VARIANTS,
        passed,
        evidence={
            "config": config.to_dict(),
            "runs": per_seed,
            "metric_spread_ratio": spread,
        },
    )


def run_all(
    settings: TestSettings,
    sut_profile,
    alternate_seeds: Sequence[int],
    config: ComplianceConfig = ComplianceConfig(),
    virtual: bool = True,
    accuracy_log: Optional[Mapping[int, int]] = None,
) -> list[ComplianceVerdict]:
    """The full audit battery in a fixed order."""
    if accuracy_log is None:
        accuracy_log, _ = run_accuracy_reference(settings, sut_profile, virtual=virtual)
    return [
        accuracy_spot_check(settings, sut_profile, accuracy_log, config, virtual=virtual),
        caching_probe(settings, sut_profile, config, virtual=virtual),
        seed_variants(settings, sut_profile, alternate_seeds, config, virtual=virtual),
    ]
