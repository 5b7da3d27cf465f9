import itertools
import math

import numpy as np
import pytest
from scipy import stats as sps

from s4mtl.stats import (bland_altman, independent_t, one_way_anova, paired_t, paired_tests, pearson,
                         wilcoxon_signed_rank)


def wilcoxon_enumeration(a, b):
    d = np.asarray(a) - np.asarray(b)
    d = d[d != 0]
    ranks = sps.rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    sums = [sum(r for r, s in zip(ranks, signs) if s)
            for signs in itertools.product((0, 1), repeat=len(d))]
    sums = np.array(sums)
    lower = np.mean(sums <= w + 1e-9)
    upper = np.mean(sums >= w - 1e-9)
    return w, min(1.0, 2 * min(lower, upper))


@pytest.mark.parametrize("n", [5, 8, 12])
@pytest.mark.parametrize("ties", [False, True])
def test_wilcoxon_exact_matches_enumeration(n, ties):
    rng = np.random.default_rng(n + 10 * ties)
    for _ in range(5):
        a = rng.normal(size=n)
        b = a + rng.normal(0.3, 1, size=n)
        if ties:
            a, b = np.round(a, 0), np.round(b, 0)
        rep = wilcoxon_signed_rank(a, b)
        w, p = wilcoxon_enumeration(a, b)
        assert rep.statistic == pytest.approx(w)
        assert rep.p_value == pytest.approx(p, abs=1e-12)


def test_wilcoxon_exact_agrees_with_scipy_without_ties():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=12), rng.normal(size=12)
    ref = sps.wilcoxon(a, b, alternative="two-sided", method="exact")
    assert wilcoxon_signed_rank(a, b).p_value == pytest.approx(ref.pvalue, abs=1e-12)


def test_wilcoxon_normal_approximation():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=40), rng.normal(0.4, 1, size=40)
    ref = sps.wilcoxon(a, b, method="approx", correction=False)
    assert wilcoxon_signed_rank(a, b).p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_wilcoxon_all_zero():
    rep = wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    assert rep.p_value == 1 and rep.degenerate


def test_paired_t_matches_scipy_and_hand_value():
    a = np.array([1.0, 2.0, 4.0, 5.0, 7.0])
    b = np.array([0.5, 2.5, 3.0, 4.0, 5.5])
    d = a - b
    t = d.mean() / (d.std(ddof=1) / math.sqrt(5))
    rep = paired_t(a, b)
    assert rep.statistic == pytest.approx(t)
    assert rep.p_value == pytest.approx(sps.ttest_rel(a, b).pvalue)


def test_paired_t_degenerate():
    rep = paired_t([1, 2, 3], [1, 2, 3])
    assert rep.degenerate and rep.statistic == 0 and rep.p_value == 1
    rep = paired_t([2, 3, 4], [1, 2, 3])
    assert rep.degenerate and rep.statistic == math.inf and rep.p_value == 0


def test_paired_tests_need_five_pairs():
    with pytest.raises(ValueError):
        paired_tests([1, 2, 3, 4], [1, 2, 3, 5])
    with pytest.raises(ValueError):
        paired_t([1, 2], [1])


def test_anova_matches_scipy():
    rng = np.random.default_rng(5)
    groups = [rng.normal(m, 1, size=k) for m, k in ((0, 7), (0.5, 9), (1, 6))]
    rep = one_way_anova(groups)
    ref = sps.f_oneway(*groups)
    assert rep.statistic == pytest.approx(ref.statistic)
    assert rep.p_value == pytest.approx(ref.pvalue)
    with pytest.raises(ValueError):
        one_way_anova([[1.0, 2.0]])


def test_anova_two_groups_equals_t_squared():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=10), rng.normal(1, 1, size=12)
    assert one_way_anova([a, b]).statistic == pytest.approx(independent_t(a, b).statistic ** 2)


def test_bland_altman():
    t = np.array([100.0, 200.0, 150.0, 120.0])
    p = np.array([110.0, 190.0, 160.0, 125.0])
    rep = bland_altman(t, p)
    d = p - t
    assert rep.mean_diff == pytest.approx(d.mean())
    assert rep.loa_high - rep.loa_low == pytest.approx(2 * 1.96 * d.std(ddof=1))
    assert rep.p_value is None


def test_pearson():
    rng = np.random.default_rng(7)
    a = rng.normal(size=30)
    b = a + rng.normal(0, 0.5, size=30)
    rep = pearson(a, b)
    assert rep.r == pytest.approx(np.corrcoef(a, b)[0, 1])
    assert -1 <= rep.r <= 1
    assert pearson([1, 1, 1], [1, 2, 3]).degenerate
