import numpy as np
import pytest

from mtmlca.bundles import Bundle, all_bundles
from mtmlca.errors import ConfigError
from mtmlca.valuemodel import (
    LOCAL,
    NATIONAL,
    REGIONAL,
    ArchetypeParams,
    AuctionInstance,
    InstanceConfig,
    RegionLayout,
    generate_instance,
    report,
    true_value,
)


def single(kind, R=2, B=2, **kw):
    return AuctionInstance(RegionLayout(R, B), (ArchetypeParams(kind, **kw),), seed=0, rho_corr=0.0)


def test_local_closed_form():
    inst = single(LOCAL, gamma=80.0, beta=0.5, interest=(0,))
    assert true_value(inst, 0, Bundle.from_items([0, 1], 4)) == pytest.approx(60.0, abs=1e-12)
    # blocks outside the interest region are worthless
    assert true_value(inst, 0, Bundle.from_items([2, 3], 4)) == 0.0


def test_national_closed_form():
    inst = single(NATIONAL, gamma=400.0, beta=0.5, delta=3.0)
    assert true_value(inst, 0, Bundle.from_items([0, 2], 4)) == pytest.approx(800.0, abs=1e-12)


def test_regional_closed_form():
    inst = single(REGIONAL, gamma=100.0, beta=0.5, hq=1)
    assert report(inst, 0, Bundle.full(4)) == pytest.approx(112.5, abs=1e-12)


@pytest.mark.parametrize("kind,kw", [
    (LOCAL, {"interest": (1,)}),
    (REGIONAL, {"hq": 0}),
    (NATIONAL, {"delta": 3.0}),
])
def test_empty_bundle_is_zero(kind, kw):
    inst = single(kind, gamma=123.0, **kw)
    assert true_value(inst, 0, Bundle.empty(4)) == 0.0
    assert true_value(inst, 0, 0) == 0.0


def test_layout():
    lay = RegionLayout(5, 3)
    assert lay.m == 15
    assert [lay.region_of(k) for k in range(15)] == [r for r in range(5) for _ in range(3)]
    assert lay.dist(0, 4) == 1
    assert lay.dist(1, 3) == 2
    assert lay.membership().sum(axis=0).tolist() == [3.0] * 5


def test_full_scale_layouts():
    # 14 regions; the larger setting doubles the blocks per region
    inst = generate_instance(InstanceConfig(14, 7, 3, 4, 3), 0)
    assert (inst.m, inst.n) == (98, 10)
    inst = generate_instance(InstanceConfig(14, 14, 3, 4, 3), 0)
    assert (inst.m, inst.n) == (196, 10)


def test_deterministic_generation():
    cfg = InstanceConfig(4, 3, 2, 2, 2)
    a, b = generate_instance(cfg, 11), generate_instance(cfg, 11)
    assert a == b
    X = all_bundles(12)
    for i in range(a.n):
        np.testing.assert_array_equal(a.values(i, X), b.values(i, X))
    assert generate_instance(cfg, 12) != a


def test_adding_bidders_keeps_existing_ones():
    small = generate_instance(InstanceConfig(4, 3, 2, 1, 1), 5)
    big = generate_instance(InstanceConfig(4, 3, 4, 1, 1), 5)
    assert small.bidders[:2] == big.bidders[:2]
    assert small.bidders[2:] == big.bidders[4:]


def test_report_equals_true_value(rng):
    inst = generate_instance(InstanceConfig(4, 3, 2, 2, 2), 3)
    for _ in range(1000):
        i = int(rng.integers(inst.n))
        mk = int(rng.integers(1 << inst.m))
        assert report(inst, i, mk) == true_value(inst, i, mk)


def test_monotone_nonnegative_exhaustive():
    inst = generate_instance(InstanceConfig(3, 2, 2, 2, 2), 9)
    X = all_bundles(inst.m)
    idx = np.arange(1 << inst.m)
    for i in range(inst.n):
        v = inst.values(i, X)
        assert v[0] == 0.0
        assert np.all(v >= 0)
        for k in range(inst.m):
            lo = idx[(idx >> k) & 1 == 0]
            assert np.all(v[lo | (1 << k)] >= v[lo])


def test_scale_ordering_over_many_instances():
    cfg = InstanceConfig(4, 3, 1, 1, 1)
    full = np.ones((1, 12))
    totals = np.zeros(3)
    for seed in range(120):
        inst = generate_instance(cfg, seed)
        totals += [inst.values(i, full)[0] for i in range(3)]
    local, regional, national = totals / 120
    assert national > regional > local


def test_correlation_knob():
    ind = generate_instance(InstanceConfig(4, 3, 6, 0, 0, rho_corr=0.0), 2)
    tied = generate_instance(InstanceConfig(4, 3, 6, 0, 0, rho_corr=1.0), 2)
    assert len({b.gamma for b in ind.bidders}) == 6
    assert len({b.gamma for b in tied.bidders}) == 1


def test_local_interest_size():
    inst = generate_instance(InstanceConfig(8, 1, 5, 0, 0), 1)
    assert all(len(b.interest) == 2 for b in inst.bidders)
    assert all(len(set(b.interest)) == 2 for b in inst.bidders)


@pytest.mark.parametrize("kw", [
    {"n_local": 0, "n_regional": 0, "n_national": 0},
    {"regions": 0},
    {"blocks_per_region": 0},
    {"rho_corr": 1.5},
    {"beta": 1.0},
    {"gamma_local": (5.0, 1.0)},
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        InstanceConfig(**kw)


def test_bidder_index_checked():
    inst = generate_instance(InstanceConfig(), 0)
    with pytest.raises(ValueError):
        true_value(inst, inst.n, 1)
    with pytest.raises(ValueError):
        inst.values(0, np.ones((1, 3)))
