"""Statistically sufficient query counts per scenario.

The count needed to bound a tail-latency percentile at a given confidence is
quadratic in the normal quantile of the confidence level:

    margin     = (1 - tail) / 20
    n_required = z^2 * tail * (1 - tail) / margin^2,   z = norm_inv((1-conf)/2)

rounded up to the next multiple of 2^13, with explicit per-scenario floors
(1,024 queries single-stream; a single query of >= 24,576 samples offline).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import ScenarioKind, TestSettings, ValidationError

ROUND_MULTIPLE = 1 << 13  # 8192
SINGLE_STREAM_MIN_QUERIES = 1024
OFFLINE_MIN_SAMPLES = 24576

# Acklam's rational approximation coefficients for the standard normal quantile.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)

_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                 / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def normal_cdf(z: float) -> float:
    """Phi(z) via the complementary error function (accurate in both tails)."""
    return 0.5 * math.erfc(-z / _SQRT2)


def norm_inv(p: float) -> float:
    """Standard normal quantile, |error| <= 1e-9 over (0,1).

    Rational approximation polished by one Newton step on the erfc-based CDF.
    Upper-tail arguments route through the exact complement 1-p (exact in
    IEEE for p >= 0.5) so the refinement always runs where the CDF has full
    relative precision; near p = 1 the direct CDF plateaus at double spacing
    and cannot resolve the quantile.
    """
    if not (0.0 < p < 1.0):
        raise ValidationError([f"norm_inv domain is (0,1), got {p}"])
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -_norm_inv_lower(1.0 - p)
    return _norm_inv_lower(p)


def _norm_inv_lower(p: float) -> float:
    z = _acklam(p)
    pdf = math.exp(-0.5 * z * z) * _INV_SQRT_2PI
    if pdf > 0.0:
        z -= (normal_cdf(z) - p) / pdf
    return z


@dataclass(frozen=True)
class QueryPlan:
    """Counts required for one (tail, confidence) pair plus scenario floors."""

    tail_percentile: float
    confidence: float
    margin: float
    raw_query_count: int
    rounded_query_count: int
    scenario_min: int
    effective_min_queries: int
    offline_sample_budget: int = 0

    def __post_init__(self):
        if self.rounded_query_count % ROUND_MULTIPLE != 0:
            raise ValidationError(["rounded_query_count must be a multiple of 8192"])
        if self.rounded_query_count < self.raw_query_count:
            raise ValidationError(["rounded_query_count must cover raw_query_count"])


def required_query_count(tail_percentile: float, confidence: float) -> QueryPlan:
    """Evaluate the margin and count equations and round up to 8192."""
    if not (0.0 < tail_percentile < 1.0):
        raise ValidationError([f"tail_percentile must be in (0,1), got {tail_percentile}"])
    if not (0.0 < confidence < 1.0):
        raise ValidationError([f"confidence must be in (0,1), got {confidence}"])
    margin = (1.0 - tail_percentile) / 20.0
    z = norm_inv((1.0 - confidence) / 2.0)
    raw = math.ceil(z * z * tail_percentile * (1.0 - tail_percentile) / (margin * margin))
    rounded = ((raw + ROUND_MULTIPLE - 1) // ROUND_MULTIPLE) * ROUND_MULTIPLE
    return QueryPlan(
        tail_percentile=tail_percentile,
        confidence=confidence,
        margin=margin,
        raw_query_count=raw,
        rounded_query_count=rounded,
        scenario_min=0,
        effective_min_queries=rounded,
    )


def plan_for_scenario(settings: TestSettings) -> QueryPlan:
    """Apply scenario floors to the statistical count.

    Single-stream uses its explicit 1,024-query floor rather than the count
    equation; offline is one query whose sample budget has a 24,576 floor;
    multistream and server take the rounded statistical count. Every scenario
    is additionally subject to the run-time duration floor.
    """
    base = required_query_count(settings.tail_percentile, settings.confidence)
    override = settings.min_query_count_override or 0
    if settings.scenario is ScenarioKind.SINGLE_STREAM:
        return QueryPlan(
            tail_percentile=base.tail_percentile,
            confidence=base.confidence,
            margin=base.margin,
            raw_query_count=base.raw_query_count,
            rounded_query_count=base.rounded_query_count,
            scenario_min=SINGLE_STREAM_MIN_QUERIES,
            effective_min_queries=max(SINGLE_STREAM_MIN_QUERIES, override),
        )
    if settings.scenario is ScenarioKind.OFFLINE:
        return QueryPlan(
            tail_percentile=base.tail_percentile,
            confidence=base.confidence,
            margin=base.margin,
            raw_query_count=base.raw_query_count,
            rounded_query_count=base.rounded_query_count,
            scenario_min=OFFLINE_MIN_SAMPLES,
            effective_min_queries=1,
            offline_sample_budget=max(OFFLINE_MIN_SAMPLES, settings.samples_per_query),
        )
    # multistream and server share the statistical count at equal tail percentile
    return QueryPlan(
        tail_percentile=base.tail_percentile,
        confidence=base.confidence,
        margin=base.margin,
        raw_query_count=base.raw_query_count,
        rounded_query_count=base.rounded_query_count,
        scenario_min=base.rounded_query_count,
        effective_min_queries=max(base.rounded_query_count, override),
    )
