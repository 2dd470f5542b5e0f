"""Deterministic trace generation: sample selection and per-scenario arrivals.

Traces are pre-generated so the timed portion of a run does no planning work.
Queries are kept in columnar form (a schedule array plus a compact sample
layout) because server-scale traces run to hundreds of thousands of queries;
`Query` objects materialize lazily on access.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

from . import rng as rngmod
from .core import Query, ScenarioKind, ModeKind, TestSettings, ValidationError, settings_digest
from .digest import bulk64, fnv1a64, MASK64
from .planner import QueryPlan


class CapacityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# arrival processes

@dataclass(frozen=True)
class Sequential:
    """Issue on prior completion (closed loop); schedule times are all zero."""


@dataclass(frozen=True)
class FixedInterval:
    interval_ns: int

    def __post_init__(self):
        if self.interval_ns <= 0:
            raise ValidationError(["FixedInterval.interval_ns must be > 0"])


@dataclass(frozen=True)
class PoissonProcess:
    lambda_qps: float

    def __post_init__(self):
        if self.lambda_qps <= 0:
            raise ValidationError(["Poisson.lambda_qps must be > 0"])


@dataclass(frozen=True)
class SingleBatch:
    """One query at t=0 carrying the whole sample budget."""


ArrivalProcess = Union[Sequential, FixedInterval, PoissonProcess, SingleBatch]


def process_for(settings: TestSettings) -> ArrivalProcess:
    if settings.scenario is ScenarioKind.SINGLE_STREAM:
        return Sequential()
    if settings.scenario is ScenarioKind.MULTI_STREAM:
        return FixedInterval(settings.interval_ns)
    if settings.scenario is ScenarioKind.SERVER:
        return PoissonProcess(settings.target_qps)
    return SingleBatch()


def _exp_gaps_ns(rng: np.random.Generator, lam_qps: float, count: int) -> np.ndarray:
    # inverse CDF: -ln(1-u)/lambda with u in [0,1); branch-free and testable
    u = rng.random(count)
    gaps_s = -np.log1p(-u) / lam_qps
    return np.rint(gaps_s * 1e9).astype(np.int64)


def gen_arrivals(process: ArrivalProcess, rng: np.random.Generator, query_count: int) -> np.ndarray:
    """Scheduled issue times (ns from run start) for `query_count` queries."""
    if query_count < 1:
        raise ValidationError(["query_count must be >= 1"])
    if isinstance(process, (Sequential, SingleBatch)):
        return np.zeros(query_count, dtype=np.int64)
    if isinstance(process, FixedInterval):
        return np.arange(query_count, dtype=np.int64) * process.interval_ns
    return np.cumsum(_exp_gaps_ns(rng, process.lambda_qps, query_count))


# ---------------------------------------------------------------------------
# sample selection

class SamplingMode(enum.Enum):
    REPLACEMENT = "replacement"          # default: uniform with replacement
    UNIQUE = "unique"                    # caching-probe part A
    DUPLICATE_SUBSET = "duplicate_subset"  # caching-probe part B
    FULL_COVERAGE = "full_coverage"      # accuracy mode: every loaded sample


def draw_sample_indices(
    rng: np.random.Generator, count: int, loaded_sample_count: int, unique: bool = False
) -> np.ndarray:
    """Per-query sample indices for single-sample queries.

    With replacement: uniform over [0, loaded_sample_count). Unique: a random
    permutation prefix, which requires count <= loaded_sample_count.
    """
    if count < 0:
        raise ValidationError(["count must be >= 0"])
    if loaded_sample_count < 1:
        raise ValidationError(["loaded_sample_count must be >= 1"])
    if unique:
        if count > loaded_sample_count:
            raise CapacityError(
                f"cannot draw {count} unique indices from a pool of {loaded_sample_count}"
            )
        return rng.permutation(loaded_sample_count)[:count].astype(np.int64)
    return rng.integers(0, loaded_sample_count, size=count, dtype=np.int64)


# ---------------------------------------------------------------------------
# sample layouts (columnar storage behind the lazy Query view)

@dataclass(frozen=True)
class IndexPerQuery:
    """One sample per query."""
    idx: np.ndarray  # int64 [n_queries]

    tag = 1

    def indices_for(self, i: int, n: int) -> Sequence[int]:
        return (int(self.idx[i]),)


@dataclass(frozen=True)
class ContiguousBlocks:
    """N samples per query, contiguous in the loaded-sample arena."""
    starts: np.ndarray  # int64 [n_queries]

    tag = 2

    def indices_for(self, i: int, n: int) -> Sequence[int]:
        s = int(self.starts[i])
        return range(s, s + n)


@dataclass(frozen=True)
class TiledBudget:
    """A single query tiling the arena until the sample budget is met."""
    budget: int
    pool: int

    tag = 3

    def indices_for(self, i: int, n: int) -> Sequence[int]:
        if self.budget <= self.pool:
            return range(self.budget)
        reps = -(-self.budget // self.pool)
        return np.tile(np.arange(self.pool, dtype=np.int64), reps)[: self.budget]


SampleLayout = Union[IndexPerQuery, ContiguousBlocks, TiledBudget]


class _QuerySeq(Sequence[Query]):
    def __init__(self, trace: "QueryTrace"):
        self._t = trace

    def __len__(self) -> int:
        return self._t.n_queries

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._t.query(j) for j in range(*i.indices(len(self)))]
        return self._t.query(i)

    def __iter__(self) -> Iterator[Query]:
        for i in range(len(self)):
            yield self._t.query(i)


@dataclass(frozen=True)
class QueryTrace:
    """Pre-generated, deterministic sequence of (issue time, sample set) queries."""

    seed: int
    settings_digest: int
    samples_per_query: int  # per-query sample count (offline: full budget)
    sched_ns: np.ndarray    # int64 [n_queries], nondecreasing
    layout: SampleLayout

    @property
    def n_queries(self) -> int:
        return len(self.sched_ns)

    @property
    def total_response_count(self) -> int:
        return self.n_queries * self.samples_per_query

    @property
    def queries(self) -> Sequence[Query]:
        return _QuerySeq(self)

    def rid_base(self, i: int) -> int:
        return i * self.samples_per_query

    def query(self, i: int) -> Query:
        n = self.samples_per_query
        base = i * n
        return Query(
            query_id=i,
            response_ids=range(base, base + n),
            sample_indices=self.layout.indices_for(i, n),
            scheduled_issue_ns=int(self.sched_ns[i]),
        )

    def trace_digest(self) -> int:
        header = struct.pack(
            "<QQQQB",
            self.seed & MASK64,
            self.settings_digest & MASK64,
            self.n_queries,
            self.samples_per_query,
            self.layout.tag,
        )
        return bulk64(
            header,
            np.ascontiguousarray(self.sched_ns).tobytes(),
            *_layout_arrays(self.layout),
        )

    # framed binary export for audit replay -------------------------------
    def to_file(self, path) -> None:
        with open(path, "wb") as f:
            body = self._pack()
            f.write(body)
            f.write(struct.pack("<Q", fnv1a64(body)))

    def _pack(self) -> bytes:
        parts = [
            _TRACE_MAGIC,
            struct.pack(
                "<QQQQB3x",
                self.seed & MASK64,
                self.settings_digest & MASK64,
                self.n_queries,
                self.samples_per_query,
                self.layout.tag,
            ),
        ]
        parts.append(np.ascontiguousarray(self.sched_ns.astype("<i8")).tobytes())
        if isinstance(self.layout, IndexPerQuery):
            parts.append(np.ascontiguousarray(self.layout.idx.astype("<i8")).tobytes())
        elif isinstance(self.layout, ContiguousBlocks):
            parts.append(np.ascontiguousarray(self.layout.starts.astype("<i8")).tobytes())
        else:
            parts.append(struct.pack("<QQ", self.layout.budget, self.layout.pool))
        return b"".join(parts)

    @classmethod
    def from_file(cls, path) -> "QueryTrace":
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) < len(_TRACE_MAGIC) + 44 or blob[: len(_TRACE_MAGIC)] != _TRACE_MAGIC:
            raise ValidationError(["not a trace file (bad magic)"])
        body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
        if fnv1a64(body) != stored:
            raise ValidationError(["trace file digest mismatch (corrupt or truncated)"])
        off = len(_TRACE_MAGIC)
        seed, sdig, n, spq, tag = struct.unpack_from("<QQQQB3x", body, off)
        off += 36
        sched = np.frombuffer(body, dtype="<i8", count=n, offset=off).astype(np.int64)
        off += 8 * n
        layout: SampleLayout
        if tag == IndexPerQuery.tag:
            layout = IndexPerQuery(np.frombuffer(body, dtype="<i8", count=n, offset=off).astype(np.int64))
        elif tag == ContiguousBlocks.tag:
            layout = ContiguousBlocks(np.frombuffer(body, dtype="<i8", count=n, offset=off).astype(np.int64))
        elif tag == TiledBudget.tag:
            budget, pool = struct.unpack_from("<QQ", body, off)
            layout = TiledBudget(budget, pool)
        else:
            raise ValidationError([f"unknown trace layout tag {tag}"])
        return cls(seed=seed, settings_digest=sdig, samples_per_query=spq, sched_ns=sched, layout=layout)


_TRACE_MAGIC = b"LGTRACE1"


def _layout_arrays(layout: SampleLayout) -> list[bytes]:
    if isinstance(layout, IndexPerQuery):
        return [np.ascontiguousarray(layout.idx).tobytes()]
    if isinstance(layout, ContiguousBlocks):
        return [np.ascontiguousarray(layout.starts).tobytes()]
    return [struct.pack("<QQ", layout.budget, layout.pool)]


# ---------------------------------------------------------------------------
# trace construction

def _required_count(settings: TestSettings, plan: QueryPlan) -> int:
    if settings.mode is ModeKind.ACCURACY:
        # accuracy runs sweep the whole loaded set once
        return max(1, -(-settings.loaded_sample_count // settings.samples_per_query))
    return plan.effective_min_queries


def _poisson_arrivals_spanning(
    rng: np.random.Generator, lam: float, min_count: int, min_span_ns: int
) -> np.ndarray:
    """At least min_count arrivals, extended until the last one reaches min_span."""
    chunk = max(min_count, 1024)
    gaps = _exp_gaps_ns(rng, lam, chunk)
    arrivals = np.cumsum(gaps)
    while arrivals[-1] < min_span_ns:
        deficit_s = (min_span_ns - arrivals[-1]) / 1e9
        extra = max(1024, int(deficit_s * lam * 1.1) + 1)
        more = np.cumsum(_exp_gaps_ns(rng, lam, extra)) + arrivals[-1]
        arrivals = np.concatenate([arrivals, more])
    if arrivals[min_count - 1] >= min_span_ns:
        n = min_count
    else:
        n = int(np.searchsorted(arrivals, min_span_ns, side="left")) + 1
    return arrivals[:n]


def build_trace(
    settings: TestSettings,
    plan: QueryPlan,
    run_seed: int | None = None,
    sampling: SamplingMode = SamplingMode.REPLACEMENT,
    subset_k: int = 8,
) -> QueryTrace:
    """Generate the full trace for a run.

    Timed-arrival scenarios get extra queries until the schedule alone spans
    the duration floor; the sequential scenario relies on cyclic reissue in
    the engine instead. Regenerating with identical (seed, settings) is
    bit-identical.
    """
    seed = settings.rng_seed if run_seed is None else run_seed
    sdig = settings_digest(settings)
    pool = settings.loaded_sample_count
    accuracy = settings.mode is ModeKind.ACCURACY
    if sampling is SamplingMode.FULL_COVERAGE:
        accuracy = True

    if settings.scenario is ScenarioKind.OFFLINE:
        budget = pool if accuracy else plan.offline_sample_budget
        sched = np.zeros(1, dtype=np.int64)
        return QueryTrace(seed, sdig, budget, sched, TiledBudget(budget, pool))

    n_min = _required_count(settings, plan)
    arr_rng = rngmod.arrivals_stream(seed)

    if settings.scenario is ScenarioKind.SINGLE_STREAM:
        sched = np.zeros(n_min, dtype=np.int64)
    elif settings.scenario is ScenarioKind.MULTI_STREAM:
        n = n_min
        if not accuracy:
            # last scheduled arrival (n-1)*I must reach the duration floor
            need = -(-settings.min_duration_ns // settings.interval_ns) + 1
            n = max(n, need)
        sched = gen_arrivals(FixedInterval(settings.interval_ns), arr_rng, n)
    else:  # SERVER
        if accuracy:
            sched = gen_arrivals(PoissonProcess(settings.target_qps), arr_rng, n_min)
        else:
            sched = _poisson_arrivals_spanning(
                arr_rng, settings.target_qps, n_min, settings.min_duration_ns
            )

    n = len(sched)
    smp_rng = rngmod.samples_stream(seed)
    spq = settings.samples_per_query
    layout = _draw_layout(smp_rng, n, spq, pool, sampling, subset_k, accuracy)
    return QueryTrace(seed, sdig, spq, sched, layout)


def _draw_layout(
    rng: np.random.Generator,
    n: int,
    spq: int,
    pool: int,
    sampling: SamplingMode,
    subset_k: int,
    accuracy: bool,
) -> SampleLayout:
    if accuracy:
        sampling = SamplingMode.FULL_COVERAGE
    if spq == 1:
        if sampling is SamplingMode.REPLACEMENT:
            return IndexPerQuery(draw_sample_indices(rng, n, pool, unique=False))
        if sampling is SamplingMode.UNIQUE:
            return IndexPerQuery(draw_sample_indices(rng, n, pool, unique=True))
        if sampling is SamplingMode.DUPLICATE_SUBSET:
            k = min(subset_k, pool)
            subset = rng.permutation(pool)[:k]
            return IndexPerQuery(subset[rng.integers(0, k, size=n)].astype(np.int64))
        # full coverage: a permutation of the pool, repeated if n > pool
        reps = -(-n // pool)
        idx = np.concatenate([rng.permutation(pool) for _ in range(reps)])[:n]
        return IndexPerQuery(idx.astype(np.int64))

    # multi-sample queries: contiguous blocks in the arena
    if spq > pool:
        raise CapacityError(f"samples_per_query {spq} exceeds loaded pool {pool}")
    if sampling is SamplingMode.REPLACEMENT:
        starts = rng.integers(0, pool - spq + 1, size=n, dtype=np.int64)
    elif sampling is SamplingMode.UNIQUE:
        n_blocks = pool // spq
        if n > n_blocks:
            raise CapacityError(
                f"cannot draw {n} non-overlapping blocks of {spq} from a pool of {pool}"
            )
        starts = (rng.permutation(n_blocks)[:n] * spq).astype(np.int64)
    elif sampling is SamplingMode.DUPLICATE_SUBSET:
        k = min(subset_k, pool - spq + 1)
        subset = rng.permutation(pool - spq + 1)[:k]
        starts = subset[rng.integers(0, k, size=n)].astype(np.int64)
    else:  # FULL_COVERAGE
        n_blocks = -(-pool // spq)
        block_starts = np.minimum(np.arange(n_blocks, dtype=np.int64) * spq, pool - spq)
        reps = -(-n // n_blocks)
        starts = np.concatenate([rng.permutation(block_starts) for _ in range(reps)])[:n]
    return ContiguousBlocks(starts)
