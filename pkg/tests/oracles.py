"""Independent oracles the tests check the implementation against.

Nothing here imports from the implementation's numerics: the normal CDF is
an explicit Maclaurin series plus a Laplace continued fraction, the quantile
is plain bisection on that CDF, and queueing expectations come from the
Pollaczek-Khinchine formula.
"""
from __future__ import annotations

import math

_SQRT_PI = math.sqrt(math.pi)
_SQRT_2 = math.sqrt(2.0)


def erf_series(x: float) -> float:
    """Maclaurin series for erf, accurate for |x| < ~2.5 in double precision."""
    term = x
    total = x
    n = 0
    while abs(term) > 1e-18 * abs(total) + 1e-300:
        n += 1
        term *= -x * x / n
        total += term / (2 * n + 1)
    return 2.0 * total / _SQRT_PI


def erfc_continued_fraction(x: float, depth: int = 120) -> float:
    """Laplace continued fraction for erfc, accurate for x >= ~1.5."""
    assert x > 0
    cf = 0.0
    for k in range(depth, 0, -1):
        cf = (k / 2.0) / (x + cf)
    return math.exp(-x * x) / _SQRT_PI / (x + cf)


def normal_cdf(z: float) -> float:
    """Phi(z) with tail-accurate relative error."""
    x = z / _SQRT_2
    if x >= 2.0:
        return 1.0 - 0.5 * erfc_continued_fraction(x)
    if x <= -2.0:
        return 0.5 * erfc_continued_fraction(-x)
    return 0.5 * (1.0 + erf_series(x))


def norm_inv_bisect(p: float, lo: float = -9.0, hi: float = 9.0, iters: int = 80) -> float:
    """Quantile by pure bisection on the series/CF CDF; |error| < 1e-13.

    Upper-tail arguments bisect on the exact complement (1-p is exact in
    IEEE for p >= 0.5) where the CDF keeps full relative precision.
    """
    assert 0.0 < p < 1.0
    if p > 0.5:
        return -norm_inv_bisect(1.0 - p, lo, hi, iters)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def nearest_rank_percentile(values, p: float):
    """Exhaustive nearest-rank definition: smallest v with F(v) >= p."""
    assert values
    ordered = sorted(values)
    n = len(ordered)
    for v in ordered:
        if sum(1 for u in ordered if u <= v) >= p * n:
            return v
    return ordered[-1]


def md1_mean_wait(service_s: float, lam_qps: float) -> float:
    """Pollaczek-Khinchine mean queueing delay for M/D/1."""
    rho = lam_qps * service_s
    assert rho < 1.0
    return service_s * rho / (2.0 * (1.0 - rho))


def ks_statistic_exponential(gaps_s, lam_qps: float) -> float:
    """One-sample Kolmogorov-Smirnov statistic against Exponential(lam)."""
    xs = sorted(gaps_s)
    n = len(xs)
    d = 0.0
    for i, x in enumerate(xs):
        f = 1.0 - math.exp(-lam_qps * x)
        d = max(d, abs((i + 1) / n - f), abs(f - i / n))
    return d


def ks_critical_1pct(n: int) -> float:
    """Asymptotic 1% critical value: sqrt(-ln(alpha/2)/2) / sqrt(n)."""
    return math.sqrt(-math.log(0.005) / 2.0) / math.sqrt(n)
