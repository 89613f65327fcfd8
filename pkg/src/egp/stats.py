"""Kruskal-Wallis H test and pairwise significance counting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaincc

DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class KWResult:
    H: float
    df: int
    p_value: float


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def chi2_sf(x: float, df: int) -> float:
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def kruskal_wallis(groups: Mapping[str, Sequence[float]] | Sequence[Sequence[float]]) -> KWResult:
    samples = list(groups.values()) if isinstance(groups, Mapping) else list(groups)
    samples = [np.asarray(g, dtype=np.float64).ravel() for g in samples]
    if len(samples) < 2 or any(len(g) == 0 for g in samples):
        raise ValueError("need at least two nonempty groups")
    pooled = np.concatenate(samples)
    n = len(pooled)
    if n < 3:
        raise ValueError("need at least three observations in total")
    df = len(samples) - 1
    ranks = midranks(pooled)
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    correction = 1.0 - tie_term / (n ** 3 - n)
    if correction <= 0:  # every value identical
        return KWResult(0.0, df, 1.0)
    h = 0.0
    pos = 0
    for g in samples:
        r = ranks[pos:pos + len(g)].sum()
        h += r * r / len(g)
        pos += len(g)
    h = (12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)) / correction
    h = max(h, 0.0)
    return KWResult(h, df, chi2_sf(h, df))


def pairwise_significance_counts(
    results: Mapping[str, Mapping[str, Sequence[float]]],
    alpha: float = DEFAULT_ALPHA,
) -> dict[str, list[int]]:
    """Count, per method and dataset, how many other methods it beats.

    ``results`` maps dataset -> method -> samples. A method beats another on a
    dataset when the two-group Kruskal-Wallis p-value is below ``alpha`` and
    its median is higher. Returns method -> per-dataset counts, datasets in
    the iteration order of ``results``.
    """
    datasets = list(results)
    methods: list[str] = []
    for d in datasets:
        for m in results[d]:
            if m not in methods:
                methods.append(m)
    if len(methods) < 2:
        raise ValueError("need at least two methods")
    counts = {m: [0] * len(datasets) for m in methods}
    for di, d in enumerate(datasets):
        per = results[d]
        names = [m for m in methods if m in per and len(per[m]) > 0]
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                xa, xb = np.asarray(per[a], float), np.asarray(per[b], float)
                if len(xa) + len(xb) < 3:
                    continue
                if kruskal_wallis([xa, xb]).p_value >= alpha:
                    continue
                ma, mb = np.median(xa), np.median(xb)
                if ma > mb:
                    counts[a][di] += 1
                elif mb > ma:
                    counts[b][di] += 1
    return counts
