from fractions import Fraction

import mpmath
import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from egp.stats import chi2_sf, kruskal_wallis, midranks, pairwise_significance_counts


def brute_force_h(groups):
    """Exact rational H: rank by counting, tie correction from scratch."""
    pooled = [Fraction(v) for g in groups for v in g]
    n = len(pooled)

    def rank(v):
        below = sum(1 for u in pooled if u < v)
        equal = sum(1 for u in pooled if u == v)
        return below + Fraction(equal + 1, 2)

    h = Fraction(0)
    for g in groups:
        r = sum(rank(Fraction(v)) for v in g)
        h += r * r / len(g)
    h = Fraction(12, n * (n + 1)) * h - 3 * (n + 1)
    ties = sum(t ** 3 - t for t in (pooled.count(v) for v in set(pooled)))
    return h / (1 - Fraction(ties, n ** 3 - n))


def mp_chi2_sf(x, df):
    mpmath.mp.dps = 40
    return float(mpmath.gammainc(mpmath.mpf(df) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True))


def test_identical_groups():
    r = kruskal_wallis({"a": [0.9, 0.9, 0.9], "b": [0.9, 0.9]})
    assert (r.H, r.df, r.p_value) == (0.0, 1, 1.0)
    r = kruskal_wallis([[1, 2, 3], [1, 2, 3]])
    assert r.H == pytest.approx(0.0, abs=1e-12) and r.p_value == pytest.approx(1.0)


def test_hand_ranked_example():
    r = kruskal_wallis([[1, 2, 3], [101, 102, 103]])
    assert float(brute_force_h([[1, 2, 3], [101, 102, 103]])) == pytest.approx(27 / 7)
    assert r.H == pytest.approx(3.857142857142857, abs=1e-12)
    assert r.p_value == pytest.approx(0.0495, abs=5e-5)
    assert r.p_value == pytest.approx(mp_chi2_sf(27 / 7, 1), abs=1e-12)


def test_textbook_three_groups():
    # three groups with ties across groups
    groups = [[2.9, 3.0, 2.5, 2.6, 3.2], [3.8, 2.7, 4.0, 2.4], [2.8, 3.4, 3.7, 2.2, 2.0, 3.0]]
    r = kruskal_wallis(groups)
    assert r.df == 2
    assert r.H == pytest.approx(float(brute_force_h(groups)), abs=1e-9)
    assert r.p_value == pytest.approx(mp_chi2_sf(r.H, 2), abs=1e-10)
    ref = scipy.stats.kruskal(*groups)
    assert r.H == pytest.approx(ref.statistic, abs=1e-9)


def test_validation():
    with pytest.raises(ValueError):
        kruskal_wallis([[1.0, 2.0]])
    with pytest.raises(ValueError):
        kruskal_wallis([[1.0], []])
    with pytest.raises(ValueError):
        kruskal_wallis([[1.0], [2.0]])


def test_midranks():
    assert midranks([10, 20, 20, 5]).tolist() == [2.0, 3.5, 3.5, 1.0]


@pytest.mark.parametrize("x, df", [(0.5, 1), (3.857, 1), (10.0, 2), (40.0, 7), (200.0, 3), (1e-6, 5)])
def test_chi2_tail_against_mpmath(x, df):
    assert chi2_sf(x, df) == pytest.approx(mp_chi2_sf(x, df), abs=1e-10)


def test_p_decreasing_in_h():
    hs = np.linspace(0, 30, 61)
    for df in (1, 2, 5):
        ps = [chi2_sf(h, df) for h in hs]
        assert all(a >= b for a, b in zip(ps, ps[1:]))


small_groups = st.lists(
    st.lists(st.integers(0, 6), min_size=1, max_size=7), min_size=2, max_size=4
).filter(lambda gs: sum(map(len, gs)) >= 3 and len({v for g in gs for v in g}) > 1)


@settings(max_examples=150, deadline=None)
@given(groups=small_groups)
def test_h_matches_brute_force(groups):
    r = kruskal_wallis(groups)
    assert r.H == pytest.approx(float(brute_force_h(groups)), abs=1e-9)
    assert 0.0 <= r.p_value <= 1.0


@settings(max_examples=60, deadline=None)
@given(groups=small_groups)
def test_monotone_transform_invariance(groups):
    a = kruskal_wallis(groups)
    b = kruskal_wallis([[np.exp(v / 2.0) * 7 - 3 for v in g] for g in groups])
    assert a.H == pytest.approx(b.H, abs=1e-9)


def test_counts_all_identical():
    res = {f"d{i}": {m: [0.8] * 10 for m in "ABC"} for i in range(3)}
    assert pairwise_significance_counts(res) == {m: [0, 0, 0] for m in "ABC"}


def test_counts_dominant_method():
    rng = np.random.default_rng(0)
    methods = [f"m{i}" for i in range(10)]
    res = {}
    for d in range(8):
        res[f"d{d}"] = {m: list(rng.uniform(0.0, 0.5, 30)) for m in methods[1:]}
        res[f"d{d}"]["m0"] = list(rng.uniform(0.9, 1.0, 30))
    counts = pairwise_significance_counts(res)
    assert sum(counts["m0"]) == 72
    for m in methods:
        assert sum(counts[m]) <= 9 * 8


def test_counts_two_method_separation():
    res = {"d": {"good": [0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97],
                 "bad": [0.5, 0.51, 0.52, 0.53, 0.54, 0.55, 0.56, 0.57]}}
    counts = pairwise_significance_counts(res)
    assert (counts["good"], counts["bad"]) == ([1], [0])


def test_counts_not_significant_at_alpha():
    # p ~ 0.0495: significant at 0.05, not at 0.01
    res = {"d": {"a": [1, 2, 3], "b": [101, 102, 103]}}
    assert pairwise_significance_counts(res)["b"] == [0]
    assert pairwise_significance_counts(res, alpha=0.05)["b"] == [1]
