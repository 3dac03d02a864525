"""Nonparametric statistics for comparing optimizer result distributions.

The module provides rank-based two-sample and k-sample tests, a
pairwise outcome classifier built on top of them, and the disagreement
score used to judge how faithfully a stand-in benchmark reproduces the
outcomes observed on the real one.

The rank-sum test switches between an exact null distribution (small
samples, no ties) and a moment-matched normal approximation with tie
and continuity corrections. The switch point is fixed so results are
reproducible across runs and machines.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm, rankdata

__all__ = [
    "EXACT_LIMIT",
    "Outcome",
    "RankSumResult",
    "TestResult",
    "kruskal_wallis",
    "outcome_penalty",
    "pairwise_outcomes",
    "rank_sum_test",
    "rmse",
    "spearman",
    "surrogate_error",
]

EXACT_LIMIT = 12


def _as_sample(values, name: str, allow_inf: bool = False) -> np.ndarray:
    # rank methods tolerate +-inf (just extreme ranks); moment methods don't
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} must contain at least one value")
    bad = np.isnan(arr).any() if allow_inf else not np.isfinite(arr).all()
    if bad:
        raise ValueError(f"{name} contains non-finite values")
    return arr


def rmse(predicted, observed) -> float:
    a = _as_sample(predicted, "predicted")
    b = _as_sample(observed, "observed")
    if a.shape != b.shape:
        raise ValueError("predicted and observed must have the same length")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def spearman(x, y) -> float:
    """Rank correlation: Pearson correlation of average ranks."""
    a = _as_sample(x, "x")
    b = _as_sample(y, "y")
    if a.shape != b.shape:
        raise ValueError("x and y must have the same length")
    if a.size < 2:
        raise ValueError("rank correlation needs at least two points")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValueError("rank correlation is undefined for constant input")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.dot(ra, rb) / math.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float


@dataclass(frozen=True)
class RankSumResult:
    statistic: float
    p_value: float
    exact: bool


def _tie_term(combined: np.ndarray) -> float:
    # sum of t^3 - t over groups of tied values
    _, counts = np.unique(combined, return_counts=True)
    t = counts.astype(np.float64)
    return float(np.sum(t**3 - t))


def _rank_sum_counts(k: int, total: int) -> np.ndarray:
    """counts[s] = number of k-subsets of {1..total} whose ranks sum to s."""
    max_sum = total * (total + 1) // 2
    table = np.zeros((k + 1, max_sum + 1), dtype=np.int64)
    table[0, 0] = 1
    for j in range(1, total + 1):
        top = min(j, k)
        for rows in range(top, 0, -1):
            table[rows, j:] += table[rows - 1, : max_sum + 1 - j]
    return table[k]


def rank_sum_test(x, y) -> RankSumResult:
    """Two-sided two-sample rank-sum test.

    The statistic is the rank sum of ``x`` within the pooled sample.
    When both samples have at most EXACT_LIMIT points and the pooled
    sample has no ties, the p-value is exact (double the smaller tail,
    capped at 1). Otherwise a normal approximation with tie and
    continuity corrections is used.
    """
    a = _as_sample(x, "x", allow_inf=True)
    b = _as_sample(y, "y", allow_inf=True)
    n, m = a.size, b.size
    total = n + m
    combined = np.concatenate([a, b])
    ranks = rankdata(combined, method="average")
    w = float(ranks[:n].sum())

    has_ties = np.unique(combined).size < total
    if not has_ties and max(n, m) <= EXACT_LIMIT:
        counts = _rank_sum_counts(n, total)
        denom = float(math.comb(total, n))
        wi = int(round(w))
        lower = float(counts[: wi + 1].sum()) / denom
        upper = float(counts[wi:].sum()) / denom
        p = min(1.0, 2.0 * min(lower, upper))
        return RankSumResult(statistic=w, p_value=p, exact=True)

    mean = n * (total + 1) / 2.0
    var = n * m / 12.0 * (total + 1 - _tie_term(combined) / (total * (total - 1)))
    if var <= 0.0:
        return RankSumResult(statistic=w, p_value=1.0, exact=False)
    diff = w - mean
    if diff > 0:
        diff -= 0.5
    elif diff < 0:
        diff += 0.5
    z = diff / math.sqrt(var)
    p = min(1.0, 2.0 * float(norm.sf(abs(z))))
    return RankSumResult(statistic=w, p_value=p, exact=False)


def kruskal_wallis(groups: Sequence) -> TestResult:
    """Tie-corrected k-sample rank test with a chi-squared p-value.

    A degenerate pooled sample (every value identical) yields H = 0 and
    p = 1 rather than an error, since downstream comparisons treat it
    as plain indistinguishability.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    arrays = [_as_sample(g, f"group {i}", allow_inf=True) for i, g in enumerate(groups)]
    combined = np.concatenate(arrays)
    total = combined.size
    if np.all(combined == combined[0]):
        return TestResult(statistic=0.0, p_value=1.0)

    ranks = rankdata(combined, method="average")
    h = 0.0
    offset = 0
    for arr in arrays:
        r = ranks[offset : offset + arr.size]
        h += arr.size * (r.mean() - (total + 1) / 2.0) ** 2
        offset += arr.size
    h *= 12.0 / (total * (total + 1))
    correction = 1.0 - _tie_term(combined) / (total**3 - total)
    h /= correction
    df = len(arrays) - 1
    return TestResult(statistic=float(h), p_value=float(chi2.sf(h, df)))


class Outcome(enum.Enum):
    """Result of comparing two optimizers on matched repetitions."""

    FIRST = "first"
    SECOND = "second"
    TIE = "tie"


def pairwise_outcomes(
    groups: Mapping[str, Sequence], alpha: float = 0.05
) -> dict[tuple[str, str], Outcome]:
    """Classify every pair of named groups as FIRST, SECOND or TIE.

    A k-sample gate test at ``alpha`` runs first; if it finds no effect
    every pair is a TIE. Otherwise each pair gets a rank-sum test at
    ``alpha`` divided by the number of pairs, and significant pairs are
    directed by comparing medians (means break a median tie). FIRST
    means the first-named group reached the lower values.
    """
    names = list(groups)
    if len(names) < 2:
        raise ValueError("need at least two groups")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    arrays = {name: _as_sample(groups[name], name, allow_inf=True) for name in names}
    pairs = list(itertools.combinations(names, 2))

    gate = kruskal_wallis([arrays[name] for name in names])
    if gate.p_value >= alpha:
        return {pair: Outcome.TIE for pair in pairs}

    threshold = alpha / len(pairs)
    result: dict[tuple[str, str], Outcome] = {}
    for first, second in pairs:
        res = rank_sum_test(arrays[first], arrays[second])
        if res.p_value >= threshold:
            result[(first, second)] = Outcome.TIE
            continue
        lo_a, lo_b = np.median(arrays[first]), np.median(arrays[second])
        if lo_a == lo_b:
            lo_a, lo_b = arrays[first].mean(), arrays[second].mean()
        if lo_a < lo_b:
            result[(first, second)] = Outcome.FIRST
        elif lo_b < lo_a:
            result[(first, second)] = Outcome.SECOND
        else:
            result[(first, second)] = Outcome.TIE
    return result


def outcome_penalty(a: Outcome, b: Outcome) -> float:
    """0 for agreement, 1 for opposite directions, 0.5 for half misses."""
    if a is b:
        return 0.0
    if Outcome.TIE in (a, b):
        return 0.5
    return 1.0


def surrogate_error(
    reference: Mapping[float, Mapping[tuple[str, str], Outcome]],
    candidate: Mapping[float, Mapping[tuple[str, str], Outcome]],
) -> float:
    """Mean outcome disagreement between two comparison tables.

    Both arguments map budget -> pair -> Outcome. Penalties are averaged
    over pairs within each budget, then averaged over budgets, so every
    budget carries equal weight regardless of how many pairs it has.
    """
    if not reference:
        raise ValueError("reference table is empty")
    if reference.keys() != candidate.keys():
        raise ValueError("budget grids differ between the two tables")
    per_budget = []
    for budget in reference:
        ref_pairs = reference[budget]
        cand_pairs = candidate[budget]
        if ref_pairs.keys() != cand_pairs.keys():
            raise ValueError(f"pair sets differ at budget {budget}")
        if not ref_pairs:
            raise ValueError(f"no pairs at budget {budget}")
        pens = [outcome_penalty(ref_pairs[p], cand_pairs[p]) for p in ref_pairs]
        per_budget.append(float(np.mean(pens)))
    return float(np.mean(per_budget))
