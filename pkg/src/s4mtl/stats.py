"""Significance tests and agreement analysis over per-sample scores."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

WILCOXON_EXACT_BELOW = 20
BA_Z = 1.96


@dataclass
class StatReport:
    test: str
    statistic: float
    p_value: float | None  # None where the analysis has no test
    degenerate: bool = False
    mean_diff: float | None = None
    loa_low: float | None = None
    loa_high: float | None = None
    r: float | None = None
    table: dict | None = field(default=None, repr=False)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("table")
        return d


def _pair(a, b, min_len: int):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be 1-D and of equal length")
    if len(a) < min_len:
        raise ValueError(f"need at least {min_len} pairs")
    return a, b


def paired_t(a, b) -> StatReport:
    a, b = _pair(a, b, 2)
    d = a - b
    mean, sd = d.mean(), d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return StatReport("paired-t", 0.0, 1.0, degenerate=True)
        return StatReport("paired-t", math.copysign(math.inf, mean), 0.0, degenerate=True)
    t = mean / (sd / math.sqrt(len(d)))
    p = 2 * sps.t.sf(abs(t), df=len(d) - 1)
    return StatReport("paired-t", float(t), float(min(1.0, p)))


def _signed_rank_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided p of W+ by enumerating all sign patterns via a count DP.

    Ranks may be mid-ranks; doubling makes them integers.
    """
    r2 = np.rint(2 * ranks).astype(int)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:-r]
    counts /= counts.sum()
    w2 = int(round(2 * w_plus))
    lower = counts[:w2 + 1].sum()
    upper = counts[w2:].sum()
    return float(min(1.0, 2 * min(lower, upper)))


def wilcoxon_signed_rank(a, b) -> StatReport:
    """Two-sided signed-rank test; zero differences are dropped.

    Exact over all 2^n sign patterns for fewer than 20 nonzero pairs,
    normal approximation with tie correction (no continuity correction)
    otherwise.
    """
    a, b = _pair(a, b, 1)
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return StatReport("wilcoxon", 0.0, 1.0, degenerate=True)
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n < WILCOXON_EXACT_BELOW:
        return StatReport("wilcoxon", w_plus, _signed_rank_exact_p(ranks, w_plus))
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (tie_counts ** 3 - tie_counts).sum() / 48
    z = (w_plus - n * (n + 1) / 4) / math.sqrt(var)
    return StatReport("wilcoxon", w_plus, float(min(1.0, 2 * sps.norm.sf(abs(z)))))


def paired_tests(a, b) -> tuple[StatReport, StatReport]:
    a, b = _pair(a, b, 5)
    return paired_t(a, b), wilcoxon_signed_rank(a, b)


def independent_t(a, b) -> StatReport:
    res = sps.ttest_ind(np.asarray(a, float), np.asarray(b, float))
    if not np.isfinite(res.statistic):
        return StatReport("independent-t", 0.0, 1.0, degenerate=True)
    return StatReport("independent-t", float(res.statistic), float(res.pvalue))


def one_way_anova(groups) -> StatReport:
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise ValueError("need at least 2 groups of at least 2 values")
    allv = np.concatenate(groups)
    grand = allv.mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df_b, df_w = len(groups) - 1, len(allv) - len(groups)
    if ss_within == 0:
        if ss_between == 0:
            return StatReport("anova", 0.0, 1.0, degenerate=True)
        return StatReport("anova", math.inf, 0.0, degenerate=True)
    F = (ss_between / df_b) / (ss_within / df_w)
    return StatReport("anova", float(F), float(sps.f.sf(F, df_b, df_w)))


def bland_altman(truth_counts, pred_counts) -> StatReport:
    """Mean difference (pred - truth) and 1.96 SD limits of agreement."""
    t, p = _pair(truth_counts, pred_counts, 2)
    diff = p - t
    mean_diff = float(diff.mean())
    sd = float(diff.std(ddof=1))
    table = {"mean": ((t + p) / 2).tolist(), "diff": diff.tolist()}
    return StatReport("bland-altman", mean_diff, None, degenerate=sd == 0, mean_diff=mean_diff,
                      loa_low=mean_diff - BA_Z * sd, loa_high=mean_diff + BA_Z * sd, table=table)


def pearson(a, b) -> StatReport:
    a, b = _pair(a, b, 3)
    if a.std() == 0 or b.std() == 0:
        return StatReport("pearson", float("nan"), 1.0, degenerate=True)
    res = sps.pearsonr(a, b)
    r = float(np.clip(res.statistic, -1.0, 1.0))
    return StatReport("pearson", r, float(res.pvalue), r=r)
