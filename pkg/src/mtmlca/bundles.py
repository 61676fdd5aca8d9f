"""Bundles as fixed-length membership words.

Item ``k`` corresponds to bit ``k`` of the integer mask, so set operations
are plain integer operations.  Model evaluation works on 0/1 numpy rows;
:func:`mask_matrix` converts between the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np


@dataclass(frozen=True, order=True)
class Bundle:
    """Subset of ``m`` items stored as a bitmask."""

    mask: int
    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("bundle length must be nonnegative")
        if self.mask < 0 or self.mask >> self.m:
            raise ValueError(f"mask {self.mask:#x} does not fit in {self.m} items")

    @classmethod
    def empty(cls, m: int) -> Bundle:
        return cls(0, m)

    @classmethod
    def full(cls, m: int) -> Bundle:
        return cls((1 << m) - 1, m)

    @classmethod
    def from_items(cls, items: Iterable[int], m: int) -> Bundle:
        mask = 0
        for k in items:
            if not 0 <= k < m:
                raise ValueError(f"item {k} out of range for m={m}")
            mask |= 1 << k
        return cls(mask, m)

    @classmethod
    def from_array(cls, x) -> Bundle:
        x = np.asarray(x).ravel()
        return cls(int(mask_of(x)), len(x))

    def items(self) -> list[int]:
        return [k for k in range(self.m) if self.mask >> k & 1]

    def to_array(self) -> np.ndarray:
        return ((self.mask >> np.arange(self.m)) & 1).astype(np.float64)

    def popcount(self) -> int:
        return self.mask.bit_count()

    def issubset(self, other: Bundle) -> bool:
        self._check(other)
        return self.mask & ~other.mask == 0

    def __or__(self, other: Bundle) -> Bundle:
        self._check(other)
        return Bundle(self.mask | other.mask, self.m)

    def __and__(self, other: Bundle) -> Bundle:
        self._check(other)
        return Bundle(self.mask & other.mask, self.m)

    def __len__(self) -> int:
        return self.m

    def _check(self, other: Bundle):
        if other.m != self.m:
            raise ValueError(f"bundle lengths differ: {self.m} vs {other.m}")

    def __str__(self):
        return "{" + ",".join(str(k) for k in self.items()) + "}"


def mask_of(x) -> int | np.ndarray:
    """Bitmask(s) of 0/1 rows; accepts a vector or a 2-D array of rows."""
    x = np.asarray(x)
    weights = 1 << np.arange(x.shape[-1], dtype=np.int64)
    return (x.astype(np.int64) * weights).sum(axis=-1)


def mask_matrix(masks, m: int) -> np.ndarray:
    """Rows of 0/1 floats, one per mask."""
    masks = np.asarray(masks, dtype=np.int64)
    return ((masks[..., None] >> np.arange(m)) & 1).astype(np.float64)


@lru_cache(maxsize=8)
def all_bundles(m: int) -> np.ndarray:
    """All ``2**m`` bundles as a read-only 0/1 matrix indexed by mask."""
    out = mask_matrix(np.arange(1 << m), m)
    out.setflags(write=False)
    return out


def random_bundles(rng: np.random.Generator, m: int, count: int) -> list[int]:
    """Independent uniform draws over nonempty bundles (as masks)."""
    out = []
    while len(out) < count:
        bits = rng.integers(0, 2, size=m)
        mask = int(mask_of(bits))
        if mask:
            out.append(mask)
    return out
