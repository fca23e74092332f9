"""Self-contained statistics kernel for the questionnaire analytics.

Implements the regularized incomplete gamma function (series + Lentz
continued fraction), the chi-square survival function built on it, the
normal survival function via erfc, two-proportion z-tests with a pooled
estimate, and Holm step-down adjustment.  No stats library is assumed.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

_EPS = 1e-15
_ITMAX = 800
_TINY = 1e-300


class ZeroExpected(ValueError):
    pass


class DegenerateGroup(ValueError):
    pass


def _gamma_p_series(a: float, x: float) -> float:
    # P(a, x) by its power series; converges fast for x < a + 1.
    ap = a
    total = 1.0 / a
    delta = total
    for _ in range(_ITMAX):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _gamma_q_cf(a: float, x: float) -> float:
    # Q(a, x) by modified Lentz continued fraction; for x >= a + 1.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _ITMAX):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("require a > 0 and x >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return min(_gamma_p_series(a, x), 1.0)
    return max(1.0 - _gamma_q_cf(a, x), 0.0)


def regularized_gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("require a > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return max(1.0 - _gamma_p_series(a, x), 0.0)
    return min(_gamma_q_cf(a, x), 1.0)


def chi2_sf(x: float, df: int) -> float:
    """P(X >= x) for a chi-square variable with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if x < 0:
        return 1.0
    return regularized_gamma_q(df / 2.0, x / 2.0)


def normal_sf(z: float) -> float:
    """P(Z >= z) for a standard normal variable."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def chi_square_gof(counts: Sequence[float], expected: Optional[Sequence[float]] = None) -> tuple[float, int, float]:
    """Goodness-of-fit test; returns (chi2, df, p).

    ``expected`` defaults to a uniform split of the observed total.
    """
    k = len(counts)
    if k < 2:
        raise ValueError("need at least two categories")
    total = float(sum(counts))
    if expected is None:
        if total <= 0:
            raise ZeroExpected("observed total is zero")
        expected = [total / k] * k
    if len(expected) != k:
        raise ValueError("expected vector length mismatch")
    if any(e <= 0 for e in expected):
        raise ZeroExpected("all expected counts must be > 0")
    chi2 = sum((o - e) ** 2 / e for o, e in zip(counts, expected))
    df = k - 1
    return chi2, df, chi2_sf(chi2, df)


def two_proportion_z(s1: int, n1: int, s2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z-test; returns (z, two-sided p)."""
    if n1 <= 0 or n2 <= 0:
        raise DegenerateGroup("group sizes must be positive")
    p1, p2 = s1 / n1, s2 / n2
    pooled = (s1 + s2) / (n1 + n2)
    var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if var == 0.0:
        return 0.0, 1.0
    z = (p1 - p2) / math.sqrt(var)
    return z, 2.0 * normal_sf(abs(z))


def holm_adjust(pvalues: Sequence[float]) -> list[float]:
    """Holm step-down adjustment: adj p_(i) = max_{j<=i} (m-j+1) p_(j), clipped at 1."""
    m = len(pvalues)
    order = sorted(range(m), key=lambda i: pvalues[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * pvalues[idx])
        adjusted[idx] = min(running, 1.0)
    return adjusted


def pairwise_proportion_tests(groups: Sequence[tuple[int, int]]) -> list[list[float]]:
    """All-pairs pooled z-tests with Holm correction.

    Returns a symmetric matrix of adjusted two-sided p-values (diagonal 1.0).
    """
    k = len(groups)
    for s, n in groups:
        if n <= 0:
            raise DegenerateGroup("group sizes must be positive")
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    raw = []
    for i, j in pairs:
        _, p = two_proportion_z(groups[i][0], groups[i][1], groups[j][0], groups[j][1])
        raw.append(p)
    adjusted = holm_adjust(raw)
    matrix = [[1.0] * k for _ in range(k)]
    for (i, j), p in zip(pairs, adjusted):
        matrix[i][j] = p
        matrix[j][i] = p
    return matrix
