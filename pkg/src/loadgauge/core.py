"""Domain types shared by the planner, schedule, engine, metrics and log modules.

All types are immutable after construction and validated on construction:
an invalid value cannot be obtained through the public constructors.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict, replace
from typing import Optional, Sequence

from .digest import canonical_json, fnv1a64

MS = 1_000_000  # ns per millisecond
SECOND = 1_000_000_000  # ns per second

# Constraint ranges used as defaults for v-style settings; an explicit
# unsafe_override flag lifts them so research configurations stay expressible.
MULTISTREAM_INTERVAL_RANGE_NS = (50 * MS, 100 * MS)
SERVER_LATENCY_BOUND_RANGE_NS = (15 * MS, 250 * MS)

DEFAULT_MIN_DURATION_NS = 60 * SECOND
DEFAULT_QOS_VIOLATION_BUDGET = 0.01
TRANSLATION_QOS_VIOLATION_BUDGET = 0.03
DEFAULT_SERVER_RUN_COUNT = 5


class ScenarioKind(enum.Enum):
    SINGLE_STREAM = "single_stream"
    MULTI_STREAM = "multi_stream"
    SERVER = "server"
    OFFLINE = "offline"

    @classmethod
    def parse(cls, text: str) -> "ScenarioKind":
        norm = text.strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "singlestream": cls.SINGLE_STREAM,
            "single_stream": cls.SINGLE_STREAM,
            "multistream": cls.MULTI_STREAM,
            "multi_stream": cls.MULTI_STREAM,
            "server": cls.SERVER,
            "offline": cls.OFFLINE,
        }
        if norm not in aliases:
            raise ValidationError([f"unknown scenario {text!r}"])
        return aliases[norm]


class ModeKind(enum.Enum):
    ACCURACY = "accuracy"
    PERFORMANCE = "performance"

    @classmethod
    def parse(cls, text: str) -> "ModeKind":
        norm = text.strip().lower()
        for m in cls:
            if m.value == norm:
                return m
        raise ValidationError([f"unknown mode {text!r}"])


class ValidationError(ValueError):
    """Raised when a constructor receives values violating type invariants.

    Carries the full list of violated invariants, not just the first.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# Scenario-dependent default tail percentiles (vision-class defaults).
_DEFAULT_TAIL = {
    ScenarioKind.SINGLE_STREAM: 0.90,
    ScenarioKind.MULTI_STREAM: 0.99,
    ScenarioKind.SERVER: 0.99,
    ScenarioKind.OFFLINE: 0.90,
}


@dataclass(frozen=True)
class TestSettings:
    """Scenario, mode, seeds, rates, bounds and minimums for one run."""

    __test__ = False  # not a pytest class despite the name

    scenario: ScenarioKind
    mode: ModeKind = ModeKind.PERFORMANCE
    tail_percentile: float = 0.0  # 0.0 -> scenario default filled in __post_init__
    confidence: float = 0.99
    latency_bound_ns: int = 100 * MS
    target_qps: float = 1000.0
    interval_ns: int = 50 * MS
    samples_per_query: int = 1
    qos_violation_budget: float = DEFAULT_QOS_VIOLATION_BUDGET
    min_duration_ns: int = DEFAULT_MIN_DURATION_NS
    min_query_count_override: Optional[int] = None
    rng_seed: int = 0xD5A1_C0DE
    loaded_sample_count: int = 1024
    server_run_count: int = DEFAULT_SERVER_RUN_COUNT
    unsafe_override: bool = False

    def __post_init__(self):
        if self.tail_percentile == 0.0:
            object.__setattr__(self, "tail_percentile", _DEFAULT_TAIL[self.scenario])
        violations = validate_settings(self)
        if violations:
            raise ValidationError(violations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.value
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestSettings":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError([f"unknown settings key {k!r}" for k in unknown])
        kwargs = dict(d)
        kwargs["scenario"] = ScenarioKind.parse(d["scenario"])
        if "mode" in d:
            kwargs["mode"] = ModeKind.parse(d["mode"])
        return cls(**kwargs)

    def with_(self, **changes) -> "TestSettings":
        return replace(self, **changes)


def validate_settings(s: TestSettings) -> list[str]:
    """Pure validation; returns every violated invariant (empty when valid)."""
    v: list[str] = []
    if not (0.0 < s.tail_percentile < 1.0):
        v.append(f"tail_percentile must be in (0,1), got {s.tail_percentile}")
    if not (0.0 < s.confidence < 1.0):
        v.append(f"confidence must be in (0,1), got {s.confidence}")
    if s.samples_per_query < 1:
        v.append(f"samples_per_query must be >= 1, got {s.samples_per_query}")
    if s.loaded_sample_count < 1:
        v.append(f"loaded_sample_count must be >= 1, got {s.loaded_sample_count}")
    if not (0.0 <= s.qos_violation_budget < 1.0):
        v.append(f"qos_violation_budget must be in [0,1), got {s.qos_violation_budget}")
    if s.min_duration_ns < 0:
        v.append("min_duration_ns must be >= 0")
    if s.server_run_count < 1:
        v.append("server_run_count must be >= 1")
    if s.min_query_count_override is not None and s.min_query_count_override < 1:
        v.append("min_query_count_override must be >= 1 when set")
    if s.scenario is ScenarioKind.SERVER:
        if s.target_qps <= 0:
            v.append(f"target_qps must be > 0 for server, got {s.target_qps}")
        lo, hi = SERVER_LATENCY_BOUND_RANGE_NS
        if not s.unsafe_override and not (lo <= s.latency_bound_ns <= hi):
            v.append(
                "latency_bound_ns %d outside server default range [%d ms, %d ms] "
                "(set unsafe_override to force)" % (s.latency_bound_ns, lo // MS, hi // MS)
            )
    if s.scenario is ScenarioKind.MULTI_STREAM:
        if s.interval_ns <= 0:
            v.append(f"interval_ns must be > 0, got {s.interval_ns}")
        lo, hi = MULTISTREAM_INTERVAL_RANGE_NS
        if not s.unsafe_override and not (lo <= s.interval_ns <= hi):
            v.append(
                "interval_ns %d outside multistream default range [%d ms, %d ms] "
                "(set unsafe_override to force)" % (s.interval_ns, lo // MS, hi // MS)
            )
        if s.samples_per_query > s.loaded_sample_count:
            v.append(
                "samples_per_query %d exceeds loaded_sample_count %d"
                % (s.samples_per_query, s.loaded_sample_count)
            )
    return v


def settings_digest(settings: TestSettings) -> int:
    """Deterministic 64-bit digest binding traces and logs to their settings."""
    return fnv1a64(canonical_json(settings.to_dict()).encode("utf-8"))


@dataclass(frozen=True)
class Query:
    """Smallest unit of work issued to the SUT.

    response_ids are unique across the whole trace even when sample_indices
    repeat, so completions for reissued samples stay distinguishable.
    """

    query_id: int
    response_ids: Sequence[int]
    sample_indices: Sequence[int]
    scheduled_issue_ns: int

    def __post_init__(self):
        if len(self.response_ids) != len(self.sample_indices):
            raise ValidationError(
                ["response_ids and sample_indices must have equal length"]
            )
        if len(self.response_ids) == 0:
            raise ValidationError(["query must carry at least one sample"])
        if self.scheduled_issue_ns < 0:
            raise ValidationError(["scheduled_issue_ns must be >= 0"])


@dataclass(frozen=True)
class LatencyRecord:
    """Issue/complete timestamps for one query on the monotonic clock."""

    query_id: int
    issue_ns: int
    complete_ns: int
    skipped_intervals: int = 0

    def __post_init__(self):
        if self.complete_ns < self.issue_ns:
            raise ValidationError(
                [f"complete_ns {self.complete_ns} < issue_ns {self.issue_ns}"]
            )
        if self.skipped_intervals < 0:
            raise ValidationError(["skipped_intervals must be >= 0"])

    @property
    def latency_ns(self) -> int:
        return self.complete_ns - self.issue_ns


@dataclass(frozen=True)
class SampleResponse:
    """One sample's response; payload bytes retained only when logging is on."""

    response_id: int
    payload_digest: int
    payload_bytes: Optional[bytes] = None

    @classmethod
    def from_bytes(cls, response_id: int, payload: bytes, keep_bytes: bool = False) -> "SampleResponse":
        return cls(
            response_id=response_id,
            payload_digest=fnv1a64(payload),
            payload_bytes=payload if keep_bytes else None,
        )


@dataclass(frozen=True)
class RunResult:
    """Scenario metric, validity verdict and constraint diagnostics for a run."""

    scenario: ScenarioKind
    metric_name: str
    metric_value: Optional[float]
    valid: bool
    violation_fraction: float
    duration_ns: int
    issued_query_count: int
    completed_query_count: int = 0
    active_window_ns: int = 0
    diagnostics: tuple[str, ...] = ()
    settings_digest: int = 0
    run_seed: int = 0
    protocol_violations: int = 0
    # raw per-query records; excluded from summaries, attached for auditing
    records: tuple[LatencyRecord, ...] = field(default=(), repr=False, compare=False)
    # columnar run data (engine-produced); cheap to attach even for huge runs
    raw: object = field(default=None, repr=False, compare=False)

    def iter_records(self):
        """Yield LatencyRecord per completed query from whichever store exists."""
        if self.records:
            yield from self.records
        elif self.raw is not None:
            yield from self.raw.iter_records()

    def summary_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "metric_name": self.metric_name,
            "metric_value": self.metric_value,
            "valid": self.valid,
            "violation_fraction": self.violation_fraction,
            "duration_ns": self.duration_ns,
            "issued_query_count": self.issued_query_count,
            "completed_query_count": self.completed_query_count,
            "active_window_ns": self.active_window_ns,
            "diagnostics": list(self.diagnostics),
            "settings_digest": self.settings_digest,
            "run_seed": self.run_seed,
            "protocol_violations": self.protocol_violations,
        }
