"""The MLCA elicitation loop, query generation, and VCG payments.

Report sets are plain dicts ``{bidder: {bundle_mask: reported_value}}``.
Randomness is drawn from substreams keyed by the auction seed:

* ``(seed, 2, i)``: bidder ``i``'s initial bundles;
* ``(seed, 3, k, i)``: bidder ``i``'s marginal economies in round ``k``;
* ``(seed, k, e, i, ...)``: fresh model initialization in round ``k`` for
  economy ``e`` (0 for the main economy, ``j + 1`` for the economy without
  bidder ``j``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import metrics
from .errors import ConfigError, ExhaustionError
from .training import FitResult, TrainConfig, build_fit_group, mt_fit
from .valuemodel import AuctionInstance, report
from .wdp import Allocation, ModelSumSolver, reported_welfare, solve_reported_wdp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MlcaConfig:
    q_init: int = 1
    q_round: int = 1
    q_max: int = 10
    seed: int | None = None

    def __post_init__(self):
        if self.q_init < 1:
            raise ConfigError("q_init must be >= 1")
        if self.q_round < 1:
            raise ConfigError("q_round must be >= 1")
        if self.q_max < self.q_init:
            raise ConfigError("q_init must not exceed q_max")

    @property
    def rounds(self) -> int:
        return (self.q_max - self.q_init) // self.q_round


@dataclass
class QueryProfile:
    """Result of one query-generation call for a bidder subset."""

    queries: dict[int, int]
    skipped: list[int]
    fit: FitResult
    predicted_welfare: float
    solver_stats: list[dict] = field(default_factory=list)


@dataclass
class AuctionOutcome:
    allocation: Allocation
    payments: tuple[float, ...]
    reported_welfare: float
    reports: dict[int, dict[int, float]]
    trace: list[dict]
    mape: list[float] = field(default_factory=list)


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng([k & 0xFFFFFFFFFFFFFFFF for k in key])


def initial_queries(instance: AuctionInstance, q_init: int, seed: int) -> dict[int, dict[int, float]]:
    """``q_init`` distinct nonempty bundles per bidder, uniformly without replacement."""
    m = instance.m
    n_bundles = (1 << m) - 1
    if q_init > n_bundles:
        raise ConfigError(f"q_init={q_init} exceeds the {n_bundles} nonempty bundles")
    reports = {}
    for i in range(instance.n):
        rng = _stream(seed, 2, i)
        if m <= 30:
            masks = [int(x) + 1 for x in rng.choice(n_bundles, size=q_init, replace=False)]
        else:
            masks, seen = [], set()
            while len(masks) < q_init:
                mk = int(sum(int(b) << k for k, b in enumerate(rng.integers(0, 2, size=m))))
                if mk and mk not in seen:
                    seen.add(mk)
                    masks.append(mk)
        reports[i] = {mk: report(instance, i, mk) for mk in masks}
    return reports


def marginal_sample(n: int, i: int, q_round: int, rng: np.random.Generator) -> tuple[int, ...]:
    """``q_round - 1`` bidders drawn uniformly without replacement from the others."""
    if q_round > n:
        raise ConfigError(f"q_round={q_round} exceeds the number of bidders n={n}")
    others = [j for j in range(n) if j != i]
    if q_round == 1:
        return ()
    picked = rng.choice(len(others), size=q_round - 1, replace=False)
    return tuple(sorted(others[int(k)] for k in picked))


def next_queries(
    bidders: Sequence[int],
    reports: Mapping[int, Mapping[int, float]],
    m: int,
    n: int,
    config: TrainConfig,
    key: Sequence[int],
) -> QueryProfile:
    """Fit the group, optimize estimated welfare, and resolve repeated queries.

    A bidder whose proposed bundle is empty or already reported gets the
    column of a re-solve in which all of its reported bundles and the empty
    bundle are forbidden.  Bidders with nothing left to ask are skipped.
    """
    bidders = tuple(sorted(bidders))
    for i in bidders:
        if not reports.get(i):
            raise ValueError(f"bidder {i} has no reports")
    group = build_fit_group(bidders, reports, m, config, key)
    fit = mt_fit(group, config)
    solver = ModelSumSolver({i: p.predict for i, p in zip(bidders, fit.models)}, m, n)
    sol = solver.solve()
    stats = [sol.stats]
    queries, skipped = {}, []
    for i in bidders:
        q = sol.allocation.columns[i]
        if q == 0 or q in reports[i]:
            try:
                re = solver.solve({i: set(reports[i]) | {0}})
            except ExhaustionError:
                skipped.append(i)
                continue
            stats.append(re.stats)
            q = re.allocation.columns[i]
        queries[i] = q
    return QueryProfile(queries, skipped, fit, sol.value, stats)


def vcg_payments(reports: Mapping[int, Mapping[int, float]], m: int, n: int) -> tuple[float, ...]:
    """Others' best reported welfare without ``i`` minus their welfare at the main allocation."""
    main, _ = solve_reported_wdp(reports, m, n)
    payments = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        _, without_i = solve_reported_wdp(reports, m, n, active=others)
        payments.append(without_i - reported_welfare(reports, main, others))
    return tuple(payments)


def run_mlca(
    instance: AuctionInstance,
    mlca_config: MlcaConfig,
    train_config: TrainConfig,
    test_set: metrics.TestSet | None = None,
) -> AuctionOutcome:
    """One complete auction; per-round MAPE is recorded when ``test_set`` is given."""
    n, m = instance.n, instance.m
    seed = instance.seed if mlca_config.seed is None else mlca_config.seed
    if mlca_config.q_round > n:
        raise ConfigError(f"q_round={mlca_config.q_round} exceeds the number of bidders n={n}")
    reports = initial_queries(instance, mlca_config.q_init, seed)
    test_y = metrics.evaluate_test_set(test_set, instance) if test_set is not None else None
    trace, mape_rows = [], []
    everyone = list(range(n))

    for k in range(1, mlca_config.rounds + 1):
        new: dict[int, set[int]] = {i: set() for i in everyone}
        marginal: dict[int, QueryProfile] = {}
        fits, solver_stats, skipped = [], [], []
        for i in everyone:
            for j in marginal_sample(n, i, mlca_config.q_round, _stream(seed, 3, k, i)):
                if j not in marginal:
                    sub = [b for b in everyone if b != j]
                    prof = next_queries(sub, {b: reports[b] for b in sub}, m, n, train_config,
                                        (seed, k, j + 1))
                    marginal[j] = prof
                    fits.append({"economy": j, **prof.fit.diagnostics()})
                    solver_stats.extend(prof.solver_stats)
                q = marginal[j].queries.get(i)
                if q:
                    new[i].add(q)
        main = next_queries(everyone, reports, m, n, train_config, (seed, k, 0))
        fits.append({"economy": None, **main.fit.diagnostics()})
        solver_stats.extend(main.solver_stats)
        skipped.extend(main.skipped)
        for i, q in main.queries.items():
            new[i].add(q)
        for i in everyone:
            for q in sorted(new[i]):
                reports[i][q] = report(instance, i, q)
        record = {
            "round": k,
            "queries": {i: sorted(new[i]) for i in everyone},
            "skipped": sorted(set(skipped)),
            "predicted_welfare": main.predicted_welfare,
            "fits": fits,
            "solver": solver_stats,
        }
        if test_y is not None:
            X = test_set.X
            preds = np.stack([p.predict(X) for p in main.fit.models])
            record["mape"] = metrics.mape(preds, test_y)
            mape_rows.append(record["mape"])
        trace.append(record)
        log.debug("round %d: %s", k, record["queries"])

    allocation, welfare = solve_reported_wdp(reports, m, n)
    payments = vcg_payments(reports, m, n)
    return AuctionOutcome(allocation, payments, welfare, reports, trace, mape_rows)
