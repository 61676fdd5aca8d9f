"""Seeded synthetic multi-region spectrum value model.

Items are license blocks laid out region-major: region ``r`` owns items
``r*B .. r*B + B - 1``.  Every bidder's value is built from the per-region
saturation ``s(c) = 1 - beta**c`` of the number ``c`` of blocks it holds in a
region, so all valuations are monotone and vanish on the empty bundle.

Three archetypes:

* local: ``gamma * sum_{r in Z} s(c_r)`` over a small interest set ``Z``;
* regional: ``gamma * sum_r s(c_r) / (1 + dist(hq, r))`` with cycle distance;
* national: ``gamma * (1 + delta * k / R) * mean_r s(c_r)`` where ``k`` is the
  number of covered regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bundles import Bundle, all_bundles, mask_matrix
from .errors import ConfigError

LOCAL, REGIONAL, NATIONAL = "local", "regional", "national"
KINDS = (LOCAL, REGIONAL, NATIONAL)


@dataclass(frozen=True)
class RegionLayout:
    regions: int
    blocks_per_region: int

    def __post_init__(self):
        if self.regions < 1:
            raise ConfigError("regions must be >= 1")
        if self.blocks_per_region < 1:
            raise ConfigError("blocks_per_region must be >= 1")

    @property
    def m(self) -> int:
        return self.regions * self.blocks_per_region

    def region_of(self, item: int) -> int:
        if not 0 <= item < self.m:
            raise ValueError(f"item {item} out of range")
        return item // self.blocks_per_region

    def dist(self, a: int, b: int) -> int:
        d = abs(a - b)
        return min(d, self.regions - d)

    def membership(self) -> np.ndarray:
        """``m x R`` 0/1 matrix mapping items to regions."""
        out = np.zeros((self.m, self.regions))
        out[np.arange(self.m), np.arange(self.m) // self.blocks_per_region] = 1.0
        return out


@dataclass(frozen=True)
class ArchetypeParams:
    kind: str
    gamma: float
    beta: float = 0.5
    interest: tuple[int, ...] = ()
    hq: int | None = None
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown bidder kind {self.kind!r}")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if self.kind == LOCAL and not self.interest:
            raise ConfigError("local bidder needs a nonempty interest set")
        if self.kind == REGIONAL and self.hq is None:
            raise ConfigError("regional bidder needs a headquarters")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")


@dataclass(frozen=True)
class InstanceConfig:
    regions: int = 4
    blocks_per_region: int = 3
    n_local: int = 1
    n_regional: int = 1
    n_national: int = 1
    rho_corr: float = 0.5
    beta: float = 0.5
    delta: float = 3.0
    gamma_local: tuple[float, float] = (50.0, 100.0)
    gamma_regional: tuple[float, float] = (100.0, 200.0)
    gamma_national: tuple[float, float] = (300.0, 600.0)

    def __post_init__(self):
        if self.regions < 1:
            raise ConfigError("regions must be >= 1")
        if self.blocks_per_region < 1:
            raise ConfigError("blocks_per_region must be >= 1")
        counts = (self.n_local, self.n_regional, self.n_national)
        if min(counts) < 0:
            raise ConfigError("bidder counts must be nonnegative")
        if sum(counts) < 1:
            raise ConfigError("at least one bidder is required")
        if not 0.0 <= self.rho_corr <= 1.0:
            raise ConfigError("rho_corr must lie in [0, 1]")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must lie in (0, 1)")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        for name in ("gamma_local", "gamma_regional", "gamma_national"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 <= low <= high")

    @property
    def n_bidders(self) -> int:
        return self.n_local + self.n_regional + self.n_national


@dataclass(frozen=True)
class AuctionInstance:
    layout: RegionLayout
    bidders: tuple[ArchetypeParams, ...]
    seed: int
    rho_corr: float
    _membership: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.bidders:
            raise ConfigError("instance needs at least one bidder")
        object.__setattr__(self, "_membership", self.layout.membership())

    @property
    def n(self) -> int:
        return len(self.bidders)

    @property
    def m(self) -> int:
        return self.layout.m

    def values(self, bidder: int, X) -> np.ndarray:
        """True values of the 0/1 bundle rows ``X`` for one bidder."""
        if not 0 <= bidder < self.n:
            raise ValueError(f"bidder index {bidder} out of range [0, {self.n})")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.m:
            raise ValueError(f"bundle length {X.shape[1]} != m={self.m}")
        p = self.bidders[bidder]
        counts = X @ self._membership
        sat = 1.0 - p.beta**counts
        R = self.layout.regions
        if p.kind == LOCAL:
            v = p.gamma * sat[:, list(p.interest)].sum(axis=1)
        elif p.kind == REGIONAL:
            w = np.array([1.0 / (1 + self.layout.dist(p.hq, r)) for r in range(R)])
            v = p.gamma * (sat @ w)
        else:
            covered = (counts >= 1).sum(axis=1)
            v = p.gamma * (1.0 + p.delta * covered / R) * sat.mean(axis=1)
        return v

    def value_table(self, bidder: int) -> np.ndarray:
        """Values of all ``2**m`` bundles, indexed by mask."""
        return self.values(bidder, all_bundles(self.m))

    def predictor(self, bidder: int):
        """The bidder's true valuation as a batch callable on 0/1 rows."""
        return lambda X: self.values(bidder, X)


def _as_rows(bundle, m: int) -> np.ndarray:
    if isinstance(bundle, Bundle):
        if bundle.m != m:
            raise ValueError(f"bundle length {bundle.m} != m={m}")
        return bundle.to_array()[None, :]
    if isinstance(bundle, (int, np.integer)):
        return mask_matrix([int(bundle)], m)
    return np.atleast_2d(np.asarray(bundle, dtype=np.float64))


def true_value(instance: AuctionInstance, bidder: int, bundle) -> float:
    """``v_i(x)`` for a :class:`Bundle`, an integer mask or a 0/1 vector."""
    return float(instance.values(bidder, _as_rows(bundle, instance.m))[0])


def report(instance: AuctionInstance, bidder: int, bundle) -> float:
    """Reported value of a bundle.  Bidders are truthful here."""
    return true_value(instance, bidder, bundle)


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *key])


def generate_instance(config: InstanceConfig, seed: int) -> AuctionInstance:
    """Draw an instance; deterministic in ``(config, seed)``.

    One archetype-level scale per kind comes from the root stream.  Each
    bidder draws from its own substream keyed by ``(seed, kind, index within
    kind)``, so adding bidders never perturbs the existing ones.
    """
    layout = RegionLayout(config.regions, config.blocks_per_region)
    R = layout.regions
    ranges = {
        LOCAL: config.gamma_local,
        REGIONAL: config.gamma_regional,
        NATIONAL: config.gamma_national,
    }
    root = _substream(seed, 0)
    gamma_arch = {kind: root.uniform(*ranges[kind]) for kind in KINDS}
    rho = config.rho_corr
    counts = {LOCAL: config.n_local, REGIONAL: config.n_regional, NATIONAL: config.n_national}

    bidders: list[ArchetypeParams] = []
    for code, kind in enumerate(KINDS):
        for idx in range(counts[kind]):
            rng = _substream(seed, 1, code, idx)
            interest: Sequence[int] = ()
            hq = None
            if kind == LOCAL:
                size = max(1, R // 4)
                interest = tuple(sorted(int(r) for r in rng.choice(R, size=size, replace=False)))
            elif kind == REGIONAL:
                hq = int(rng.integers(R))
            gamma_ind = rng.uniform(*ranges[kind])
            gamma = (1.0 - rho) * gamma_ind + rho * gamma_arch[kind]
            bidders.append(
                ArchetypeParams(
                    kind=kind,
                    gamma=float(gamma),
                    beta=config.beta,
                    interest=tuple(interest),
                    hq=hq,
                    delta=config.delta if kind == NATIONAL else 0.0,
                )
            )
    return AuctionInstance(layout=layout, bidders=tuple(bidders), seed=seed, rho_corr=rho)
