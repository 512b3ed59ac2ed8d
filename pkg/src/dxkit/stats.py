"""Bootstrap confidence intervals, McNemar and Mann-Whitney tests.

Only the three procedures the evaluation harness needs, implemented
directly so every numeric path is auditable against a brute-force oracle.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import EmptyInput, InvariantViolation


def bootstrap_ci(
    values: Sequence[float] | Sequence[bool],
    statistic: str = "mean",
    n_resamples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile 95% interval of the resampled statistic.

    Resampling draws index matrices of shape (n_resamples, n) from
    numpy's default generator seeded with `seed`, so results are
    reproducible per seed.
    """
    if len(values) == 0:
        raise EmptyInput("bootstrap needs at least one value")
    if n_resamples < 1:
        raise InvariantViolation("n_resamples must be >= 1")
    if statistic != "mean":
        raise InvariantViolation(f"unsupported statistic {statistic!r}")
    arr = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(n_resamples, arr.size))
    stats = arr[idx].mean(axis=1)
    low, high = np.percentile(stats, [2.5, 97.5])
    return float(low), float(high)


def mcnemar_two_sided(b: int, c: int, mode: str = "auto") -> float:
    """Two-sided McNemar p-value from the discordant counts.

    Exact mode doubles the binomial(b+c, 1/2) tail at min(b, c); the
    chi-square mode applies the standard continuity correction.  Auto
    picks exact below 25 discordant pairs.
    """
    if b < 0 or c < 0:
        raise InvariantViolation("discordant counts must be >= 0")
    n = b + c
    if n == 0:
        return 1.0
    if mode == "auto":
        mode = "exact" if n < 25 else "chi2cc"
    if mode == "exact":
        tail = sum(math.comb(n, i) for i in range(min(b, c) + 1)) / 2.0**n
        return min(1.0, 2.0 * tail)
    if mode == "chi2cc":
        chi2 = (abs(b - c) - 1.0) ** 2 / n
        return math.erfc(math.sqrt(chi2 / 2.0))  # survival of chi-square, df=1
    raise InvariantViolation(f"unknown mode {mode!r}")


def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0  # ranks are 1-based
        for pos in range(i, j + 1):
            ranks[order[pos]] = avg
        i = j + 1
    return ranks


def mann_whitney_two_sided(
    xs: Sequence[float], ys: Sequence[float]
) -> tuple[float, float]:
    """U statistic for xs (pairs where x beats y, ties as half) and the
    two-sided p under the tie-corrected, continuity-corrected normal
    approximation.  All-identical samples give p=1 by convention."""
    if len(xs) == 0 or len(ys) == 0:
        raise EmptyInput("both samples must be non-empty")
    n1, n2 = len(xs), len(ys)
    combined = list(xs) + list(ys)
    ranks = _midranks(combined)
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2.0

    big_n = n1 + n2
    counts: dict[float, int] = {}
    for v in combined:
        counts[v] = counts.get(v, 0) + 1
    tie_sum = sum(t**3 - t for t in counts.values())
    if big_n < 2 or tie_sum == big_n**3 - big_n:
        return u1, 1.0  # degenerate variance: every value identical
    sigma2 = n1 * n2 / 12.0 * ((big_n + 1) - tie_sum / (big_n * (big_n - 1)))
    if sigma2 <= 0:
        return u1, 1.0
    mu = n1 * n2 / 2.0
    z = max(abs(u1 - mu) - 0.5, 0.0) / math.sqrt(sigma2)  # continuity correction
    p = math.erfc(z / math.sqrt(2.0))
    return u1, min(1.0, p)
