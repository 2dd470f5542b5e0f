"""Simulated SUTs: deterministic/stochastic latency models plus adversaries.

Each profile is a frozen config; `simulator(...)` yields a per-run stateful
simulator that maps (query index, issue time) to a completion time and
produces deterministic response payloads. The same simulator drives both
virtual-time sweeps and wall-clock runs, so scenario semantics cannot drift
between the two modes.
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from typing import Optional, TYPE_CHECKING

import numpy as np

from .core import ModeKind, TestSettings, ValidationError
from .digest import mix64

if TYPE_CHECKING:
    from .schedule import QueryTrace

MS = 1_000_000


def honest_payload(sample_index: int) -> bytes:
    """Canonical response bytes for a sample; identical in every honest run."""
    return struct.pack("<Q", mix64(0x9E3779B97F4A7C15, "payload", sample_index))


class Simulator:
    """Per-run state; completion_for is called once per query in issue order."""

    name = "sim"

    def completion_for(self, qidx: int, issue_ns: int) -> int:
        raise NotImplementedError

    def batch(self, issue_ns: np.ndarray) -> Optional[np.ndarray]:
        """Vectorized completions for an open-loop schedule, when supported."""
        return None

    def payload(self, sample_index: int) -> bytes:
        return honest_payload(sample_index)


@dataclass(frozen=True)
class ConstantLatency:
    latency_ns: int

    def __post_init__(self):
        if self.latency_ns <= 0:
            raise ValidationError(["ConstantLatency.latency_ns must be > 0"])

    def simulator(self, settings: TestSettings, trace: "QueryTrace") -> Simulator:
        return _ConstSim(self.latency_ns)

    def spec(self) -> str:
        return f"constant:{_fmt_ns(self.latency_ns)}"


class _ConstSim(Simulator):
    def __init__(self, d: int, name: str = "constant"):
        self.d = d
        self.name = name

    def completion_for(self, qidx, issue_ns):
        return issue_ns + self.d

    def batch(self, issue_ns):
        return issue_ns + self.d


@dataclass(frozen=True)
class Instant:
    """Null SUT: completion at the issue timestamp (zero service)."""

    def simulator(self, settings, trace) -> Simulator:
        return _ConstSim(0, name="instant")

    def spec(self) -> str:
        return "instant"


@dataclass(frozen=True)
class LognormalLatency:
    """Latency = median * exp(sigma * Z); own seed, independent of the trace."""

    median_ns: int
    sigma: float
    seed: int = 1

    def __post_init__(self):
        if self.median_ns <= 0 or self.sigma < 0:
            raise ValidationError(["LognormalLatency needs median_ns > 0 and sigma >= 0"])

    def simulator(self, settings, trace) -> Simulator:
        return _LognormalSim(self)

    def spec(self) -> str:
        return f"lognormal:{_fmt_ns(self.median_ns)}:{self.sigma}:{self.seed}"


class _LognormalSim(Simulator):
    name = "lognormal"

    def __init__(self, p: LognormalLatency):
        self._rng = np.random.Generator(np.random.Philox(key=mix64(p.seed, "lognormal")))
        self._median = p.median_ns
        self._sigma = p.sigma
        self._buf: list[int] = []
        self._pos = 0

    def _draw(self, n: int) -> np.ndarray:
        z = self._rng.standard_normal(n)
        lat = np.rint(self._median * np.exp(self._sigma * z)).astype(np.int64)
        return np.maximum(lat, 1)

    def completion_for(self, qidx, issue_ns):
        if self._pos >= len(self._buf):
            self._buf = self._draw(4096).tolist()
            self._pos = 0
        d = self._buf[self._pos]
        self._pos += 1
        return issue_ns + d

    def batch(self, issue_ns):
        return issue_ns + self._draw(len(issue_ns))


@dataclass(frozen=True)
class BatchQueue:
    """FIFO queue, `parallelism` servers, service = setup + per_sample * N."""

    service_per_sample_ns: int
    setup_ns: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if self.service_per_sample_ns <= 0:
            raise ValidationError(["BatchQueue.service_per_sample_ns must be > 0"])
        if self.setup_ns < 0:
            raise ValidationError(["BatchQueue.setup_ns must be >= 0"])
        if self.parallelism < 1:
            raise ValidationError(["BatchQueue.parallelism must be >= 1"])

    def simulator(self, settings, trace) -> Simulator:
        service = self.setup_ns + self.service_per_sample_ns * trace.samples_per_query
        return _BatchQueueSim(service, self.parallelism)

    def spec(self) -> str:
        return f"batch:{_fmt_ns(self.service_per_sample_ns)}:{_fmt_ns(self.setup_ns)}:{self.parallelism}"


class _BatchQueueSim(Simulator):
    name = "batch_queue"

    def __init__(self, service_ns: int, parallelism: int):
        self.service = service_ns
        self.free = [0] * parallelism  # next-free time per server

    def completion_for(self, qidx, issue_ns):
        free = self.free
        j = free.index(min(free))
        end = max(issue_ns, free[j]) + self.service
        free[j] = end
        return end

    def batch(self, issue_ns):
        if len(self.free) == 1:
            # Lindley recurrence unrolled: end_k = s*(k+1) + max_{j<=k}(t_j - s*j),
            # with the server's initial busy state folded into the first term
            s = self.service
            k = np.arange(len(issue_ns), dtype=np.int64)
            a = issue_ns - s * k
            a[0] = max(int(a[0]), self.free[0])
            ends = np.maximum.accumulate(a) + s * (k + 1)
            self.free[0] = int(ends[-1])
            return ends
        return None


@dataclass(frozen=True)
class CachingSut:
    """Per-sample cold/warm latency through an LRU of `cache_size` samples.

    A rule-breaking profile: real submissions must not cache, so this is the
    known-guilty subject for the caching probe.
    """

    cold_ns: int
    warm_ns: int
    cache_size: int

    def __post_init__(self):
        if self.cold_ns <= 0 or self.warm_ns <= 0:
            raise ValidationError(["CachingSut latencies must be > 0"])
        if self.cache_size < 1:
            raise ValidationError(["CachingSut.cache_size must be >= 1"])

    def simulator(self, settings, trace) -> Simulator:
        return _CachingSim(self, trace)

    def spec(self) -> str:
        return f"caching:{_fmt_ns(self.cold_ns)}:{_fmt_ns(self.warm_ns)}:{self.cache_size}"


class _CachingSim(Simulator):
    name = "caching"

    def __init__(self, p: CachingSut, trace):
        self.p = p
        self.trace = trace
        self.lru: dict[int, None] = {}

    def completion_for(self, qidx, issue_ns):
        n = self.trace.samples_per_query
        total = 0
        lru = self.lru
        for s in self.trace.layout.indices_for(qidx % self.trace.n_queries, n):
            s = int(s)
            if s in lru:
                del lru[s]
                total += self.p.warm_ns
            else:
                total += self.p.cold_ns
                if len(lru) >= self.p.cache_size:
                    del lru[next(iter(lru))]
            lru[s] = None
        return issue_ns + total


@dataclass(frozen=True)
class ModeCheat:
    """Honest in accuracy mode; degrades responses in performance mode."""

    latency_ns: int = 2 * MS
    cheat_in_performance: bool = True

    def simulator(self, settings, trace) -> Simulator:
        cheat = self.cheat_in_performance and settings.mode is ModeKind.PERFORMANCE
        return _ModeCheatSim(self.latency_ns, cheat)

    def spec(self) -> str:
        return f"modecheat:{_fmt_ns(self.latency_ns)}:{int(self.cheat_in_performance)}"


class _ModeCheatSim(_ConstSim):
    name = "modecheat"

    def __init__(self, d: int, cheat: bool):
        super().__init__(d, name="modecheat")
        self.cheat = cheat

    def payload(self, sample_index):
        if self.cheat:
            return struct.pack("<Q", mix64(0xBADC0DE, "degraded", sample_index))
        return honest_payload(sample_index)


@dataclass(frozen=True)
class SeedCheat:
    """Fast only on the officially seeded trace; slow on alternates."""

    official_trace_digest: int
    fast_ns: int = 1 * MS
    slow_ns: int = 3 * MS

    def simulator(self, settings, trace) -> Simulator:
        d = self.fast_ns if trace.trace_digest() == self.official_trace_digest else self.slow_ns
        return _ConstSim(d, name="seedcheat")

    def spec(self) -> str:
        return f"seedcheat:{self.official_trace_digest:016x}:{_fmt_ns(self.fast_ns)}:{_fmt_ns(self.slow_ns)}"


SimProfile = (ConstantLatency, Instant, LognormalLatency, BatchQueue, CachingSut, ModeCheat, SeedCheat)


# ---------------------------------------------------------------------------
# profile descriptors ("constant:5ms", "batch:0.5ms:2ms:1", ...)

_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_TIME_RE = re.compile(r"^([0-9]*\.?[0-9]+)\s*(ns|us|ms|s)?$")


def parse_ns(text: str) -> int:
    m = _TIME_RE.match(text.strip())
    if not m:
        raise ValidationError([f"cannot parse duration {text!r}"])
    value, unit = m.groups()
    return int(round(float(value) * _UNITS[unit or "ns"]))


def _fmt_ns(ns: int) -> str:
    for unit in ("s", "ms", "us"):
        scale = _UNITS[unit]
        if ns >= scale and ns % scale == 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"


def parse_profile(text: str):
    """Parse a simulated-SUT descriptor (with or without a `sim:` prefix)."""
    body = text[4:] if text.startswith("sim:") else text
    parts = body.split(":")
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "constant":
            return ConstantLatency(parse_ns(args[0]))
        if kind == "instant" or kind == "null":
            return Instant()
        if kind == "lognormal":
            return LognormalLatency(parse_ns(args[0]), float(args[1]),
                                    int(args[2]) if len(args) > 2 else 1)
        if kind == "batch":
            return BatchQueue(parse_ns(args[0]),
                              parse_ns(args[1]) if len(args) > 1 else 0,
                              int(args[2]) if len(args) > 2 else 1)
        if kind == "caching":
            return CachingSut(parse_ns(args[0]), parse_ns(args[1]), int(args[2]))
        if kind == "modecheat":
            return ModeCheat(parse_ns(args[0]) if args else 2 * MS)
        if kind == "seedcheat":
            return SeedCheat(int(args[0], 16),
                             parse_ns(args[1]) if len(args) > 1 else 1 * MS,
                             parse_ns(args[2]) if len(args) > 2 else 3 * MS)
    except (IndexError, ValueError) as e:
        raise ValidationError([f"bad sim profile {text!r}: {e}"]) from e
    raise ValidationError([f"unknown sim profile kind {kind!r}"])
