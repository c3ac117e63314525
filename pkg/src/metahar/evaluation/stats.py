"""Wilcoxon signed-rank test for paired per-fold accuracies."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

EXACT_MAX_N = 25
ALPHA = 0.05


@dataclass(frozen=True)
class SignificanceResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["significant"] = self.significant
        return d


def _exact_null_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+ (ranks doubled to integers)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> SignificanceResult:
    """Two-sided paired test of ``a`` against ``b``.

    Zero differences are dropped and tied magnitudes receive mid-ranks. The
    statistic is the smaller of the positive and negative rank sums. Up to
    ``EXACT_MAX_N`` non-zero pairs the p-value is exact, computed from the
    permutation distribution of the observed ranks (ties included);
    beyond that a normal approximation with tie and continuity
    corrections is used.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ValueError(f"need two equal-length non-empty samples, got {a.size} and {b.size}")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return SignificanceResult(0.0, 1.0, 0, "degenerate")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        # mid-ranks are multiples of 1/2, so doubled ranks are integers
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_null_counts(ranks2)
        w2 = int(round(2 * w))
        total2 = int(ranks2.sum())
        tail = counts[: w2 + 1].sum() + counts[total2 - w2 :].sum()
        if 2 * w2 >= total2:
            # the two tails overlap at the centre; the two-sided p is 1
            tail = counts.sum()
        p = min(1.0, tail / counts.sum())
        return SignificanceResult(w, float(p), n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts**3 - tie_counts).sum() / 48.0
    if var <= 0:
        return SignificanceResult(w, 1.0, n, "normal")
    z = (abs(w - mean) - 0.5) / math.sqrt(var)
    p = math.erfc(max(z, 0.0) / math.sqrt(2.0))
    return SignificanceResult(w, float(min(1.0, p)), n, "normal")
