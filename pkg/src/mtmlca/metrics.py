"""Evaluation metrics for completed auctions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .bundles import mask_matrix, random_bundles
from .wdp import true_welfare

EXACT_WILCOXON_MAX = 20

# Mean efficiency of the plain-MVNN baseline on the 98-item, (3, 4, 3)-bidder
# spectrum setting; kept for reference only.
REFERENCE_BASELINE_EFFICIENCY = 0.464


def efficiency(welfare: float, optimal_welfare: float) -> float:
    if optimal_welfare <= 0:
        raise ValueError("optimal welfare must be positive")
    return welfare / optimal_welfare


@dataclass(frozen=True)
class TestSet:
    """Bundles shared by every instance of one experimental setting."""

    __test__ = False  # keep pytest from collecting this class

    masks: tuple[int, ...]
    m: int
    seed: int

    @property
    def X(self) -> np.ndarray:
        return mask_matrix(list(self.masks), self.m)


def build_test_set(instances: Sequence, n_test: int, seed: int, max_draws: int | None = None) -> TestSet:
    """Draw ``n_test`` nonempty bundles, redrawing any bundle that some bidder
    of some instance values at zero."""
    if not instances:
        raise ValueError("need at least one instance")
    m = instances[0].m
    if any(inst.m != m for inst in instances):
        raise ValueError("instances of one setting must share the item count")
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 4])
    budget = max_draws if max_draws is not None else 1000 * n_test
    masks: list[int] = []
    draws = 0
    while len(masks) < n_test:
        if draws >= budget:
            raise ValueError(f"could not find {n_test} test bundles valued positively by all bidders")
        (mk,) = random_bundles(rng, m, 1)
        draws += 1
        x = mask_matrix([mk], m)
        if all(inst.values(i, x)[0] > 0 for inst in instances for i in range(inst.n)):
            masks.append(mk)
    return TestSet(tuple(masks), m, seed)


def evaluate_test_set(test_set: TestSet, instance) -> np.ndarray:
    """``n x n_test`` true values of the test bundles."""
    X = test_set.X
    return np.stack([instance.values(i, X) for i in range(instance.n)])


def mape(predictions, true_values) -> float:
    """Mean over bidders of the mean absolute percentage error over test bundles."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    y = np.atleast_2d(np.asarray(true_values, dtype=np.float64))
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} != true-value shape {y.shape}")
    if np.any(y == 0):
        raise ValueError("true value of zero in MAPE denominator")
    per_bidder = np.mean(np.abs((pred - y) / y), axis=1)
    return float(np.mean(per_bidder))


def welfare_and_utilities(instance, outcome) -> tuple[float, tuple[float, ...], float]:
    """True welfare of the final allocation, bidder utilities, and revenue."""
    alloc = outcome.allocation
    values = [
        float(instance.values(i, mask_matrix([alloc.columns[i]], instance.m))[0])
        for i in range(instance.n)
    ]
    utilities = tuple(v - p for v, p in zip(values, outcome.payments))
    revenue = float(sum(outcome.payments))
    return true_welfare(instance, alloc), utilities, revenue


def wilcoxon_one_tailed(pairs) -> tuple[float, float]:
    """One-tailed signed-rank test of ``a > b`` over ``(a, b)`` pairs.

    Zero differences are dropped and ties get average ranks.  ``W`` is the
    rank sum of negative differences; the p-value is ``P(W' <= W)`` under
    random signs, computed exactly for up to 20 nonzero differences and by a
    continuity-corrected normal approximation beyond.
    """
    pairs = [tuple(p) for p in pairs]
    if not pairs:
        raise ValueError("need at least one pair")
    d = np.array([a - b for a, b in pairs], dtype=np.float64)
    d = d[d != 0]
    if d.size == 0:
        return 0.0, 1.0
    ranks = rankdata(np.abs(d))
    w = float(ranks[d < 0].sum())
    if d.size <= EXACT_WILCOXON_MAX:
        return w, _exact_lower_tail(ranks, w)
    n = d.size
    _, tie_counts = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (w + 0.5 - mean) / math.sqrt(var)
    return w, min(1.0, 0.5 * math.erfc(-z / math.sqrt(2.0)))


def _exact_lower_tail(ranks: np.ndarray, w: float) -> float:
    # average ranks are half-integers, so doubled ranks count exactly
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    target = int(round(2 * w))
    return float(counts[: target + 1].sum()) / float(2**doubled.size)
