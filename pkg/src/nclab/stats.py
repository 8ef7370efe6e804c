"""Rank statistics and classification scores used by the fairness comparison.

Everything here is plain numpy/stdlib so the p-values and AUCs can be audited
against brute-force enumeration in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EXACT_MAX_SAMPLE = 12


class DegenerateInputError(ValueError):
    """Raised when a statistic is undefined for the given input."""


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" | "normal-approx"
    u_other: float = math.nan

    @property
    def alternative(self) -> str:
        return "two-sided"


def midranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    sorted_x = x[order]
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _tie_sizes(values) -> np.ndarray:
    _, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
    return counts


def roc_auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("roc_auc needs both classes present")
    ranks = midranks(s)
    u_pos = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_pos / (n_pos * n_neg))


def f1_score(predicted, actual) -> float:
    """F1 of the positive class (label 1).

    Returns NaN when there are neither actual nor predicted positives, since
    precision and recall are both 0/0 there.
    """
    p = np.asarray(predicted).astype(int)
    a = np.asarray(actual).astype(int)
    if p.shape != a.shape:
        raise ValueError("predicted and actual must have the same length")
    tp = int(np.sum((p == 1) & (a == 1)))
    fp = int(np.sum((p == 1) & (a == 0)))
    fn = int(np.sum((p == 0) & (a == 1)))
    if tp + fp + fn == 0:
        return math.nan
    return 2.0 * tp / (2.0 * tp + fp + fn)


def kendall_tau(xs, ys) -> float:
    """Tie-corrected Kendall tau-b. NaN when either argument is constant."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("kendall_tau needs two 1-D vectors of equal length")
    if len(x) < 2:
        raise ValueError("kendall_tau needs at least two observations")
    iu = np.triu_indices(len(x), k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = len(dx)
    ties_x = int(np.sum(dx == 0))
    ties_y = int(np.sum(dy == 0))
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        return math.nan
    return float(np.sum(dx * dy) / denom)


@lru_cache(maxsize=None)
def _u_counts(n: int, m: int) -> tuple[int, ...]:
    # counts[u] = number of arrangements of n A's and m B's with U_A == u
    if n == 0 or m == 0:
        return (1,)
    size = n * m + 1
    counts = [0] * size
    # largest element is from A: contributes m to U_A
    for u, c in enumerate(_u_counts(n - 1, m)):
        counts[u + m] += c
    for u, c in enumerate(_u_counts(n, m - 1)):
        counts[u] += c
    return tuple(counts)


def exact_u_cdf(u: float, n: int, m: int) -> tuple[float, float]:
    """Return (P[U <= u], P[U >= u]) under the no-ties null."""
    counts = _u_counts(n, m)
    total = math.comb(n + m, n)
    k = int(round(u))
    lower = sum(counts[: k + 1])
    upper = sum(counts[k:])
    return lower / total, upper / total


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(sample_a, sample_b) -> UTestResult:
    """Two-sided Mann-Whitney U test.

    Exact null distribution when both samples have at most 12 values and there
    are no ties; otherwise the normal approximation with tie and continuity
    corrections.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("mann_whitney_u needs two nonempty samples")
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    u_a = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    u_b = n * m - u_a
    ties = _tie_sizes(pooled)
    has_ties = bool(np.any(ties > 1))

    if max(n, m) <= EXACT_MAX_SAMPLE and not has_ties:
        lower, upper = exact_u_cdf(u_a, n, m)
        p = min(1.0, 2.0 * min(lower, upper))
        return UTestResult(u_a, p, "exact", u_b)

    big_n = n + m
    tie_term = float(np.sum(ties**3 - ties)) / (big_n * (big_n - 1))
    var = n * m / 12.0 * ((big_n + 1) - tie_term)
    if var <= 0:
        return UTestResult(u_a, 1.0, "normal-approx", u_b)
    z = (abs(u_a - n * m / 2.0) - 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * _norm_sf(z))
    return UTestResult(u_a, p, "normal-approx", u_b)
