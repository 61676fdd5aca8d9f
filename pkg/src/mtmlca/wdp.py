"""Exact allocation solvers.

Three problems share this module:

* reported winner determination: each active bidder receives one of its
  reported bundles or nothing, maximizing the sum of reported values;
* maximization of a sum of monotone value estimators over feasible
  allocations, optionally forbidding given bundles per bidder;
* the true-welfare optimum of an auction instance.

The last two are solved exactly by a max-plus dynamic program over item
subsets when ``m <= DP_MAX_ITEMS`` and by a depth-first branch-and-bound with
the monotone bound ``sum_i f_i(assigned_i | unassigned)`` otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .bundles import Bundle, all_bundles, mask_matrix
from .errors import CapacityError, ExhaustionError

log = logging.getLogger(__name__)

DP_MAX_ITEMS = 14
MAX_EXACT_ITEMS = 24

Estimator = Callable[[np.ndarray], np.ndarray]
ReportSet = Mapping[int, Mapping[int, float]]


@dataclass(frozen=True)
class Allocation:
    """One bundle mask per bidder; column ``i`` is bidder ``i``'s bundle."""

    columns: tuple[int, ...]
    m: int

    @classmethod
    def empty(cls, n: int, m: int) -> Allocation:
        return cls((0,) * n, m)

    @property
    def n(self) -> int:
        return len(self.columns)

    def bundle(self, i: int) -> Bundle:
        return Bundle(self.columns[i], self.m)

    def matrix(self) -> np.ndarray:
        """``m x n`` 0/1 assignment matrix."""
        return mask_matrix(list(self.columns), self.m).T if self.columns else np.zeros((self.m, 0))

    def is_feasible(self) -> bool:
        seen = 0
        for col in self.columns:
            if col & seen or col >> self.m:
                return False
            seen |= col
        return True


@dataclass
class Solution:
    allocation: Allocation
    value: float
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# reported winner determination


def solve_reported_wdp(
    reports: ReportSet, m: int, n: int | None = None, active: Iterable[int] | None = None
) -> tuple[Allocation, float]:
    """Maximize reported social welfare over the ``active`` bidders.

    Bidders branch in ascending order over their reports (highest value
    first, ties by mask) and then the empty bundle.  The bound adds, for each
    remaining bidder, its best report still compatible with the used items.
    """
    sol = _reported_wdp(reports, m, n, active)
    return sol.allocation, sol.value


def _reported_wdp(reports, m, n=None, active=None) -> Solution:
    if n is None:
        n = max(reports, default=-1) + 1
    active = sorted(set(range(n) if active is None else active))
    order = [i for i in active if reports.get(i)]
    options = {
        i: sorted(((float(v), mk) for mk, v in reports[i].items()), key=lambda p: (-p[0], p[1]))
        for i in order
    }
    best_val = -1.0
    best: list[int] = []
    chosen: list[int] = []
    nodes = prunes = 0

    def bound(depth, used):
        total = 0.0
        for i in order[depth:]:
            for v, mk in options[i]:
                if not mk & used:
                    total += v
                    break
        return total

    def dfs(depth, used, value):
        nonlocal best_val, best, nodes, prunes
        nodes += 1
        if depth == len(order):
            if value > best_val:
                best_val, best = value, list(chosen)
            return
        if value + bound(depth, used) <= best_val:
            prunes += 1
            return
        for v, mk in options[order[depth]]:
            if not mk & used:
                chosen.append(mk)
                dfs(depth + 1, used | mk, value + v)
                chosen.pop()
        chosen.append(0)
        dfs(depth + 1, used, value)
        chosen.pop()

    dfs(0, 0, 0.0)
    cols = [0] * n
    for i, mk in zip(order, best):
        cols[i] = mk
    welfare = 0.0
    for i in order:
        if cols[i]:
            welfare += float(reports[i][cols[i]])
    return Solution(Allocation(tuple(cols), m), welfare, {"nodes": nodes, "prunes": prunes})


def reported_welfare(reports: ReportSet, allocation: Allocation, bidders: Iterable[int]) -> float:
    """Sum of reported values of allocated bundles that were reported."""
    total = 0.0
    for i in bidders:
        mk = allocation.columns[i]
        if mk and mk in reports.get(i, {}):
            total += float(reports[i][mk])
    return total


# ---------------------------------------------------------------------------
# subset dynamic program


@lru_cache(maxsize=4)
def _subset_pairs(m: int):
    """All ``(S, T)`` with ``T`` a submask of ``S``, grouped by ``S``.

    Within a group, ``T`` runs from ``S`` itself down to the empty set, so
    the first maximizer found gives the current bidder the most items.
    """
    code = np.arange(3**m, dtype=np.int64)[::-1]
    S = np.zeros(code.size, dtype=np.int64)
    T = np.zeros(code.size, dtype=np.int64)
    x = code.copy()
    for k in range(m):
        digit = x % 3
        x //= 3
        S |= (digit > 0).astype(np.int64) << k
        T |= (digit == 2).astype(np.int64) << k
    order = np.argsort(S, kind="stable")
    S, T = S[order], T[order]
    starts = np.flatnonzero(np.r_[True, S[1:] != S[:-1]])
    rest = (S & ~T).astype(np.intp)
    T = T.astype(np.intp)
    for a in (rest, T, starts):
        a.setflags(write=False)
    return rest, T, starts


def _dp_pass(g: np.ndarray, f: np.ndarray, m: int) -> np.ndarray:
    """``out[S] = max over T subset of S of g[S - T] + f[T]``."""
    rest, T, starts = _subset_pairs(m)
    return np.maximum.reduceat(g.take(rest) + f.take(T), starts)


def _dp_choice(g: np.ndarray | None, f: np.ndarray, S: int, m: int) -> tuple[float, int]:
    """Value and first maximizing ``T`` of ``g[S - T] + f[T]`` (``g = 0`` if None)."""
    rest, T, starts = _subset_pairs(m)
    lo = starts[S]
    hi = starts[S + 1] if S + 1 < starts.size else T.size
    Ts = T[lo:hi]
    vals = f[Ts] if g is None else g[rest[lo:hi]] + f[Ts]
    k = int(np.argmax(vals))
    return float(vals[k]), int(Ts[k])


class ModelSumSolver:
    """Exact maximizer of ``sum_i f_i(a_i)`` over feasible allocations.

    Value tables for every bundle are computed once.  For the dynamic program
    the solver keeps prefix tables ``P_k`` (best value of the first ``k``
    bidders within each item set) and suffix tables ``Q_k`` (bidders after
    the ``k``-th), so a solve that forbids bundles for a single bidder costs
    one extra pass.  Ties go to the bidder reconstructed first, taking the
    largest bundle; the main solve reconstructs bidders in ascending order.
    """

    def __init__(self, models: Mapping[int, Estimator], m: int, n: int, check: bool = True,
                 method: str = "auto"):
        if method not in ("auto", "dp", "bnb"):
            raise ValueError(f"unknown solver method {method!r}")
        if not models:
            raise ValueError("need at least one bidder to optimize over")
        if m > MAX_EXACT_ITEMS:
            raise CapacityError(
                f"m={m} exceeds the exact-search limit {MAX_EXACT_ITEMS}; use a smaller layout"
            )
        self.m, self.n = m, n
        self.bidders = sorted(models)
        if self.bidders[-1] >= n or self.bidders[0] < 0:
            raise ValueError("bidder index out of range")
        self.models = dict(models)
        if method == "dp" and m > DP_MAX_ITEMS:
            raise CapacityError(f"m={m} exceeds the dynamic-program limit {DP_MAX_ITEMS}")
        self.use_dp = method == "dp" or (method == "auto" and m <= DP_MAX_ITEMS)
        self._values: dict[tuple[int, int], float] = {}
        self.tables: dict[int, np.ndarray] = {}
        if self.use_dp:
            X = all_bundles(m)
            for i in self.bidders:
                f = np.asarray(self.models[i](X), dtype=np.float64)
                if check:
                    _check_monotone(f, m, i)
                self.tables[i] = f
        elif check:
            for i in self.bidders:
                z = float(self.models[i](np.zeros((1, m)))[0])
                if abs(z) > 1e-9:
                    raise ValueError(f"model of bidder {i} is nonzero on the empty bundle")
        self._prefix: dict[int, np.ndarray] = {}
        self._suffix: dict[int, np.ndarray] = {}
        self.passes = 0

    def solve(self, exclusions: Mapping[int, Iterable[int]] | None = None) -> Solution:
        exclusions = {i: set(v) for i, v in (exclusions or {}).items() if i in self.models and v}
        for i, ex in exclusions.items():
            if len(ex) >= 1 << self.m and all(mk in ex for mk in range(1 << self.m)):
                raise ExhaustionError(f"every bundle is excluded for bidder {i}", [i])
        if not self.use_dp:
            return self._solve_bnb(exclusions)
        before = self.passes
        if len(exclusions) <= 1:
            i = next(iter(exclusions), self.bidders[0])
            cols, value = self._solve_anchored(self.bidders.index(i), exclusions.get(i, ()))
        else:
            cols, value = self._solve_sequential(exclusions)
        alloc = Allocation(tuple(cols), self.m)
        return Solution(alloc, self.objective(alloc),
                        {"solver": "dp", "passes": self.passes - before, "dp_value": value})

    def _table(self, i, excluded=()):
        f = self.tables[i]
        if excluded:
            f = f.copy()
            f[list(excluded)] = -np.inf
        return f

    def _pass(self, g, f):
        self.passes += 1
        return _dp_pass(g, f, self.m)

    def _P(self, k):
        # best value of bidders[:k] using items within S
        if k == 0:
            return np.zeros(1 << self.m)
        if k not in self._prefix:
            self._prefix[k] = self._pass(self._P(k - 1), self.tables[self.bidders[k - 1]])
        return self._prefix[k]

    def _Q(self, k):
        # best value of bidders[k+1:] using items within S
        r = len(self.bidders)
        if k == r - 1:
            return np.zeros(1 << self.m)
        if k not in self._suffix:
            self._suffix[k] = self._pass(self._Q(k + 1), self.tables[self.bidders[k + 1]])
        return self._suffix[k]

    def _solve_anchored(self, k, excluded):
        m, r = self.m, len(self.bidders)
        full = (1 << m) - 1
        P, Q = self._P(k), self._Q(k)
        if k == 0:
            H = Q
        elif k == r - 1:
            H = P
        else:
            H = self._pass(Q, P)
        value, T = _dp_choice(H, self._table(self.bidders[k], excluded), full, m)
        if not np.isfinite(value):
            raise ExhaustionError("no feasible allocation respects the exclusions",
                                  [self.bidders[k]])
        cols = [0] * self.n
        cols[self.bidders[k]] = T
        S = full ^ T
        if k == 0:
            U = 0
        elif k == r - 1:
            U = S
        else:
            _, U = _dp_choice(Q, P, S, m)
        V = S ^ U
        for j in range(k - 1, -1, -1):
            _, T = _dp_choice(self._P(j) if j else None, self.tables[self.bidders[j]], U, m)
            cols[self.bidders[j]] = T
            U ^= T
        for j in range(k + 1, r):
            _, T = _dp_choice(self._Q(j) if j < r - 1 else None, self.tables[self.bidders[j]], V, m)
            cols[self.bidders[j]] = T
            V ^= T
        return cols, value

    def _solve_sequential(self, exclusions):
        m = self.m
        full = (1 << m) - 1
        tables = [self._table(i, exclusions.get(i, ())) for i in self.bidders]
        g = [None] * len(tables)
        prev = np.zeros(1 << m)
        for k in range(len(tables) - 1):
            prev = g[k] = self._pass(prev, tables[k])
        value, _ = _dp_choice(g[-2] if len(tables) > 1 else None, tables[-1], full, m)
        if not np.isfinite(value):
            raise ExhaustionError("no feasible allocation respects the exclusions", list(exclusions))
        cols = [0] * self.n
        S = full
        for k in range(len(tables) - 1, -1, -1):
            _, T = _dp_choice(g[k - 1] if k else None, tables[k], S, m)
            cols[self.bidders[k]] = T
            S ^= T
        return cols, value

    def objective(self, alloc: Allocation) -> float:
        if self.use_dp:
            return float(sum(self.tables[i][alloc.columns[i]] for i in self.bidders))
        return float(sum(self._value(i, alloc.columns[i]) for i in self.bidders))

    def _value(self, i: int, mask: int) -> float:
        key = (i, mask)
        v = self._values.get(key)
        if v is None:
            v = self._values[key] = float(self.models[i](mask_matrix([mask], self.m))[0])
        return v

    def _solve_bnb(self, exclusions) -> Solution:
        m = self.m
        bidders = self.bidders
        full = (1 << m) - 1
        assigned = {i: 0 for i in bidders}
        best_val = -np.inf
        best = None
        nodes = prunes = 0
        value = self._value

        def dfs(item, unassigned):
            nonlocal best_val, best, nodes, prunes
            nodes += 1
            if item == m:
                if any(assigned[i] in exclusions.get(i, ()) for i in bidders):
                    return
                leaf = sum(value(i, assigned[i]) for i in bidders)
                if leaf > best_val:
                    best_val, best = leaf, dict(assigned)
                return
            if sum(value(i, assigned[i] | unassigned) for i in bidders) <= best_val:
                prunes += 1
                return
            bit = 1 << item
            rest = unassigned & ~bit
            for i in bidders:
                assigned[i] |= bit
                dfs(item + 1, rest)
                assigned[i] &= ~bit
            dfs(item + 1, rest)

        dfs(0, full)
        if best is None:
            raise ExhaustionError("no feasible allocation respects the exclusions", list(exclusions))
        cols = [0] * self.n
        for i, mk in best.items():
            cols[i] = mk
        return Solution(Allocation(tuple(cols), m), float(best_val),
                        {"solver": "bnb", "nodes": nodes, "prunes": prunes})


def _check_monotone(f: np.ndarray, m: int, bidder: int):
    tol = 1e-9 * (1.0 + float(np.max(np.abs(f))))
    if abs(f[0]) > tol:
        raise ValueError(f"model of bidder {bidder} is nonzero on the empty bundle")
    idx = np.arange(f.size)
    for k in range(m):
        lo = idx[(idx >> k) & 1 == 0]
        if np.any(f[lo | (1 << k)] < f[lo] - tol):
            raise ValueError(f"model of bidder {bidder} is not monotone")


def maximize_model_sum(
    models: Mapping[int, Estimator],
    m: int,
    n: int,
    exclusions: Mapping[int, Iterable[int]] | None = None,
    method: str = "auto",
) -> Solution:
    """Exact maximizer of the estimated welfare of the bidders in ``models``.

    Bidders outside ``models`` receive the empty bundle.  ``exclusions`` maps a
    bidder to bundle masks its column must avoid.  ``method`` picks the
    dynamic program (``"dp"``), the branch-and-bound (``"bnb"``) or the
    default for the item count (``"auto"``).
    """
    return ModelSumSolver(models, m, n, method=method).solve(exclusions)


def monotone_upper_bound(
    models: Mapping[int, Estimator], assigned: Mapping[int, int], unassigned: int, m: int
) -> float:
    """``sum_i f_i(assigned_i | unassigned)``; admissible for monotone ``f_i``."""
    total = 0.0
    for i in sorted(models):
        mk = assigned.get(i, 0) | unassigned
        total += float(models[i](mask_matrix([mk], m))[0])
    return total


def optimal_true_welfare(instance, max_items: int = MAX_EXACT_ITEMS) -> tuple[Allocation, float]:
    """Welfare-maximizing allocation under true values."""
    if instance.m > max_items:
        raise CapacityError(
            f"m={instance.m} exceeds the exact-search limit {max_items}; use a smaller layout"
        )
    models = {i: instance.predictor(i) for i in range(instance.n)}
    sol = ModelSumSolver(models, instance.m, instance.n, check=False).solve()
    return sol.allocation, sol.value


def true_welfare(instance, allocation: Allocation) -> float:
    total = 0.0
    for i, mk in enumerate(allocation.columns):
        if mk:
            total += float(instance.values(i, mask_matrix([mk], instance.m))[0])
    return total
