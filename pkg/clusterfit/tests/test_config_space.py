"""Tests for the configuration space and the priority partition."""

import math
from pathlib import Path

import numpy as np
import pytest

from clusterfit.core.config_space import (
    ClusterConfig,
    ConfigSpace,
    MachineType,
    PartitionParams,
    build_priority_partition,
    encode_features,
    enumerate_space,
    load_catalog,
    space_from_pairs,
    usable_memory_gb,
)
from clusterfit.core.errors import ConfigLookupError, ConfigurationError
from clusterfit.core.memory_model import MemoryCategory, MemoryModel, MemoryRequirement

TEST_DATA = Path(__file__).parent / "test_data"

LINEAR = MemoryModel.declared(MemoryCategory.LINEAR)
FLAT = MemoryModel.declared(MemoryCategory.FLAT)
UNCLEAR = MemoryModel.declared(MemoryCategory.UNCLEAR)


def _catalog():
    return [
        MachineType("c.large", 2, 4.0, 0.085),
        MachineType("m.large", 2, 8.0, 0.096),
        MachineType("r.large", 2, 16.0, 0.126),
    ]


def _aws_69():
    sizes = [("large", 2, 1.0), ("xlarge", 4, 2.0), ("2xlarge", 8, 4.0)]
    families = [("c4", 3.75, 0.1), ("m4", 8.0, 0.1), ("r4", 15.25, 0.133)]
    catalog = [
        MachineType(f"{fam}.{size}", cores, mem * mult, price * mult)
        for fam, mem, price in families
        for size, cores, mult in sizes
    ]
    scale_outs = [4, 6, 8, 10, 12, 16, 24, 32]
    pairs = [(m.name, s) for m in catalog for s in scale_outs]
    # the measured dataset misses three of the 72 combinations
    dropped = {("c4.2xlarge", 32), ("m4.2xlarge", 32), ("r4.2xlarge", 32)}
    return catalog, space_from_pairs(catalog, [p for p in pairs if p not in dropped])


def test_enumerate_cartesian():
    space = enumerate_space(_catalog(), [8, 4, 12])
    assert len(space) == 9
    assert [c.label for c in space][:3] == ["c.largex4", "c.largex8", "c.largex12"]


def test_enumerate_single():
    space = enumerate_space([MachineType("m.large", 2, 8.0, 0.1)], [4])
    assert len(space) == 1
    assert space[0].total_memory_gb == 32.0


@pytest.mark.parametrize("catalog, scale_outs", [([], [4]), (_catalog(), []), (_catalog(), [4, 4])])
def test_enumerate_rejects_bad_input(catalog, scale_outs):
    with pytest.raises(ConfigurationError):
        enumerate_space(catalog, scale_outs)


def test_non_rectangular_69():
    _, space = _aws_69()
    assert len(space) == 69


def test_pairs_order_is_canonical():
    space = load_catalog(TEST_DATA / "catalog_pairs.yaml")
    assert [c.label for c in space] == ["m4.largex4", "m4.largex12", "m4.xlargex8"]


def test_load_rectangular_catalog():
    space = load_catalog(TEST_DATA / "catalog.yaml")
    assert len(space) == 9
    assert space.describe()["scale_outs"] == [4, 8, 12]


def test_duplicate_configs_rejected():
    m = MachineType("m.large", 2, 8.0, 0.1)
    with pytest.raises(ConfigurationError):
        ConfigSpace([ClusterConfig(m, 4), ClusterConfig(m, 4)])


def test_machine_type_validation():
    with pytest.raises(ConfigurationError):
        MachineType("bad", 0, 8.0, 0.1)
    with pytest.raises(ConfigurationError):
        ClusterConfig(MachineType("m", 2, 8.0, 0.1), 0)


def test_encode_bounds_and_midpoints():
    space = enumerate_space(_catalog(), [4, 8, 12])
    raw = space.raw_features
    lo, hi = raw.min(axis=0), raw.max(axis=0)

    smallest = min(space, key=lambda c: c.total_memory_gb)
    assert encode_features(smallest, space).values[1] == 0.0
    most_cores = max(space, key=lambda c: c.total_cores)
    assert encode_features(most_cores, space).values[0] == 1.0

    for cid, cfg in enumerate(space):
        vec = encode_features(cfg, space).as_array()
        expected = np.where(hi > lo, (raw[cid] - lo) / np.where(hi > lo, hi - lo, 1), 0.5)
        assert np.allclose(vec, expected)


def test_constant_dimension_is_half():
    # one machine type: memory per core never changes
    space = enumerate_space([MachineType("m.large", 2, 8.0, 0.1)], [4, 8])
    vec = encode_features(space[0], space)
    assert vec.values[3] == 0.5


def test_encode_is_pure():
    space = enumerate_space(_catalog(), [4, 8])
    assert encode_features(space[3], space) == encode_features(space[3], space)


def test_encode_unknown_config():
    space = enumerate_space(_catalog(), [4, 8])
    with pytest.raises(ConfigLookupError):
        encode_features(ClusterConfig(_catalog()[0], 16), space)


def test_flat_ten_lowest_memory():
    _, space = _aws_69()
    part = build_priority_partition(space, FLAT, None, PartitionParams(flat_count=10))
    assert len(part.priority) == 10
    order = sorted(space.ids, key=lambda i: (space[i].total_memory_gb, space[i].hourly_cost, i))
    assert part.priority == frozenset(order[:10])


def test_flat_fraction_rounds_up():
    _, space = _aws_69()
    part = build_priority_partition(space, FLAT, None, PartitionParams(flat_fraction=0.15))
    assert len(part.priority) == math.ceil(0.15 * 69)


def test_unclear_is_full_space():
    _, space = _aws_69()
    part = build_priority_partition(space, UNCLEAR, None, PartitionParams())
    assert part.priority == frozenset(range(69))
    assert part.remainder == frozenset()


def test_linear_unsatisfiable_uses_extremes():
    _, space = _aws_69()
    params = PartitionParams(extreme_fraction=0.10)
    part = build_priority_partition(space, LINEAR, MemoryRequirement(job_gb=10_000), params)
    q = math.ceil(0.10 * 69)
    by_mem = sorted(space.ids, key=lambda i: (space[i].total_memory_gb, space[i].hourly_cost, i))
    by_mem_desc = sorted(
        space.ids, key=lambda i: (-space[i].total_memory_gb, space[i].hourly_cost, i)
    )
    assert part.priority == frozenset(by_mem[:q]) | frozenset(by_mem_desc[:q])


def test_linear_membership_matches_inequality():
    _, space = _aws_69()
    params = PartitionParams(per_node_overhead_gb=2.0, leeway_fraction=0.1)
    part = build_priority_partition(space, LINEAR, MemoryRequirement(job_gb=42), params)
    for i, cfg in enumerate(space):
        fits = cfg.total_memory_gb - cfg.scale_out * 2.0 >= 42 * (1.0 + 0.1)
        assert (i in part.priority) == fits


def test_requirement_presence_checked():
    space = enumerate_space(_catalog(), [4])
    with pytest.raises(ConfigurationError):
        build_priority_partition(space, LINEAR, None, PartitionParams())
    with pytest.raises(ConfigurationError):
        build_priority_partition(space, FLAT, MemoryRequirement(1.0), PartitionParams())


def test_random_partitions_hold_invariants():
    rng = np.random.default_rng(42)
    for trial in range(1000):
        n_types = int(rng.integers(1, 5))
        catalog = [
            MachineType(
                f"t{k}",
                int(rng.choice([1, 2, 4, 8])),
                float(rng.choice([2.0, 4.0, 8.0, 16.0, 32.0])),
                float(rng.uniform(0.05, 1.0)),
            )
            for k in range(n_types)
        ]
        scale_outs = sorted(rng.choice(np.arange(1, 40), size=int(rng.integers(1, 6)), replace=False))
        space = enumerate_space(catalog, [int(s) for s in scale_outs])
        params = PartitionParams(
            flat_fraction=float(rng.uniform(0.05, 1.0)),
            per_node_overhead_gb=float(rng.uniform(0, 3)),
            leeway_fraction=float(rng.uniform(0, 0.3)),
        )
        kind = [MemoryCategory.LINEAR, MemoryCategory.FLAT, MemoryCategory.UNCLEAR][trial % 3]
        req = MemoryRequirement(float(rng.uniform(1, 600))) if kind is MemoryCategory.LINEAR else None
        part = build_priority_partition(space, MemoryModel.declared(kind), req, params)

        assert part.priority
        assert not part.priority & part.remainder
        assert part.covers(space)
        if kind is MemoryCategory.FLAT and part.remainder:
            assert max(space[i].total_memory_gb for i in part.priority) <= min(
                space[i].total_memory_gb for i in part.remainder
            )
        if kind is MemoryCategory.LINEAR:
            needed = req.job_gb * (1 + params.leeway_fraction)
            fitting = {i for i in space.ids if usable_memory_gb(space[i], params) >= needed}
            if fitting:
                assert part.priority == fitting
