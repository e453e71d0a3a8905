"""Paired t-test on replication metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from scipy.special import betainc


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: int
    mean_diff: float
    degenerate: bool = False


def student_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for Student's t, via the regularized incomplete beta function."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(min(1.0, max(0.0, betainc(df / 2.0, 0.5, x))))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTest:
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length ({len(a)} vs {len(b)})")
    n = len(a)
    if n < 2:
        raise ValueError("a paired t-test needs at least two pairs")
    d = [x - y for x, y in zip(a, b)]
    mean = math.fsum(d) / n
    var = math.fsum((x - mean) ** 2 for x in d) / (n - 1)
    sd = math.sqrt(var)
    # floating-point noise around an exactly constant difference
    if sd <= 1e-12 * max(1.0, abs(mean)):
        if mean == 0.0 or abs(mean) <= 1e-12:
            return TTest(0.0, 1.0, n - 1, 0.0)
        return TTest(math.copysign(math.inf, mean), 0.0, n - 1, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, student_two_sided_p(t, n - 1), n - 1, mean)
