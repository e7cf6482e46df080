"""Machine catalog, cluster configurations and the memory-aware priority split."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
import yaml

from clusterfit import config
from clusterfit.core.errors import ConfigLookupError, ConfigurationError
from clusterfit.core.memory_model import MemoryCategory, MemoryModel, MemoryRequirement

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("total_cores", "total_memory_gb", "scale_out", "memory_per_core_gb")


@dataclass(frozen=True)
class MachineType:
    """A node SKU."""
    name: str
    cores: int
    memory_gb: float
    price_per_hour: float

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigurationError("machine type needs a name")
        if self.cores < 1:
            raise ConfigurationError(f"{self.name}: cores must be >= 1 (got {self.cores})")
        if not self.memory_gb > 0:
            raise ConfigurationError(f"{self.name}: memory_gb must be > 0 (got {self.memory_gb})")
        if not self.price_per_hour > 0:
            raise ConfigurationError(
                f"{self.name}: price_per_hour must be > 0 (got {self.price_per_hour})"
            )


@dataclass(frozen=True)
class ClusterConfig:
    """A machine type scaled out to ``scale_out`` nodes."""
    machine_type: MachineType
    scale_out: int

    def __post_init__(self) -> None:
        if self.scale_out < 1:
            raise ConfigurationError(f"scale_out must be >= 1 (got {self.scale_out})")

    @property
    def total_memory_gb(self) -> float:
        return self.scale_out * self.machine_type.memory_gb

    @property
    def total_cores(self) -> int:
        return self.scale_out * self.machine_type.cores

    @property
    def hourly_cost(self) -> float:
        return self.scale_out * self.machine_type.price_per_hour

    @property
    def memory_per_core_gb(self) -> float:
        return self.machine_type.memory_gb / self.machine_type.cores

    @property
    def key(self) -> tuple[str, int]:
        return (self.machine_type.name, self.scale_out)

    @property
    def label(self) -> str:
        return f"{self.machine_type.name}x{self.scale_out}"


@dataclass(frozen=True)
class FeatureVector:
    """Min-max normalized config features, ordered as FEATURE_NAMES."""
    values: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self) -> int:
        return len(self.values)


class ConfigSpace:
    """Ordered, duplicate-free set of cluster configurations.

    A config's id is its position. Instances are immutable after construction.
    """

    def __init__(self, configs: Iterable[ClusterConfig]) -> None:
        self._configs: tuple[ClusterConfig, ...] = tuple(configs)
        if not self._configs:
            raise ConfigurationError("configuration space is empty")
        self._index: dict[tuple[str, int], int] = {}
        types: dict[str, MachineType] = {}
        for i, cfg in enumerate(self._configs):
            if cfg.key in self._index:
                raise ConfigurationError(f"duplicate configuration {cfg.label}")
            known = types.setdefault(cfg.machine_type.name, cfg.machine_type)
            if known != cfg.machine_type:
                raise ConfigurationError(
                    f"machine type {cfg.machine_type.name} defined twice with different attributes"
                )
            self._index[cfg.key] = i

    def __len__(self) -> int:
        return len(self._configs)

    def __iter__(self) -> Iterator[ClusterConfig]:
        return iter(self._configs)

    def __getitem__(self, config_id: int) -> ClusterConfig:
        if not 0 <= config_id < len(self._configs):
            raise ConfigLookupError(f"config id {config_id} not in space of {len(self)}")
        return self._configs[config_id]

    @property
    def configs(self) -> tuple[ClusterConfig, ...]:
        return self._configs

    @property
    def ids(self) -> range:
        return range(len(self._configs))

    def index_of(self, cfg: ClusterConfig | tuple[str, int]) -> int:
        key = cfg.key if isinstance(cfg, ClusterConfig) else tuple(cfg)
        try:
            idx = self._index[key]
        except KeyError:
            raise ConfigLookupError(f"configuration {key} is not in the space") from None
        if isinstance(cfg, ClusterConfig) and self._configs[idx] != cfg:
            raise ConfigLookupError(f"configuration {cfg.label} differs from the space's entry")
        return idx

    def __contains__(self, cfg: object) -> bool:
        return isinstance(cfg, ClusterConfig) and self._index.get(cfg.key) is not None \
            and self._configs[self._index[cfg.key]] == cfg

    @cached_property
    def raw_features(self) -> np.ndarray:
        return np.array(
            [
                [c.total_cores, c.total_memory_gb, c.scale_out, c.memory_per_core_gb]
                for c in self._configs
            ],
            dtype=float,
        )

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        """Normalized features of every config, one row per id."""
        raw = self.raw_features
        lo = raw.min(axis=0)
        span = raw.max(axis=0) - lo
        out = np.full_like(raw, 0.5)
        varying = span > 0
        out[:, varying] = (raw[:, varying] - lo[varying]) / span[varying]
        out.setflags(write=False)
        return out

    @cached_property
    def hourly_costs(self) -> np.ndarray:
        costs = np.array([c.hourly_cost for c in self._configs], dtype=float)
        costs.setflags(write=False)
        return costs

    def describe(self) -> dict[str, Any]:
        return {
            "size": len(self),
            "machine_types": sorted({c.machine_type.name for c in self._configs}),
            "scale_outs": sorted({c.scale_out for c in self._configs}),
        }


def enumerate_space(catalog: Sequence[MachineType], scale_outs: Sequence[int]) -> ConfigSpace:
    """Cartesian product in catalog order x ascending scale-out."""
    if not catalog:
        raise ConfigurationError("machine catalog is empty")
    if not scale_outs:
        raise ConfigurationError("scale-out list is empty")
    names = [m.name for m in catalog]
    if len(set(names)) != len(names):
        raise ConfigurationError("machine type names must be unique")
    if len(set(scale_outs)) != len(scale_outs):
        raise ConfigurationError("scale-outs must be unique")
    return ConfigSpace(
        ClusterConfig(m, s) for m in catalog for s in sorted(scale_outs)
    )


def space_from_pairs(
    catalog: Sequence[MachineType], pairs: Iterable[tuple[str, int]]
) -> ConfigSpace:
    """Non-rectangular space from explicit (type name, scale-out) pairs.

    Order is still catalog order x ascending scale-out, whatever the pair order.
    """
    if not catalog:
        raise ConfigurationError("machine catalog is empty")
    by_name = {m.name: m for m in catalog}
    if len(by_name) != len(catalog):
        raise ConfigurationError("machine type names must be unique")
    wanted: dict[str, set[int]] = {}
    for name, scale_out in pairs:
        if name not in by_name:
            raise ConfigurationError(f"pair references unknown machine type {name!r}")
        scale_out = int(scale_out)
        if scale_out in wanted.setdefault(name, set()):
            raise ConfigurationError(f"duplicate pair ({name}, {scale_out})")
        wanted[name].add(scale_out)
    if not wanted:
        raise ConfigurationError("explicit configuration list is empty")
    return ConfigSpace(
        ClusterConfig(m, s) for m in catalog for s in sorted(wanted.get(m.name, ()))
    )


def load_catalog(path: Path | str) -> ConfigSpace:
    """Build a space from a YAML catalog file.

    Schema::

        machine_types:
          - {name: m5.large, cores: 2, memory_gb: 8, price_per_hour: 0.096}
        scale_outs: [4, 8, 12]          # rectangular space, or
        configs: [[m5.large, 4], ...]   # explicit name, scale_out pairs
    """
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    try:
        catalog = [
            MachineType(
                name=str(m["name"]),
                cores=int(m["cores"]),
                memory_gb=float(m["memory_gb"]),
                price_per_hour=float(m["price_per_hour"]),
            )
            for m in data.get("machine_types", [])
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"{path}: bad machine type record ({e})") from None
    if "configs" in data:
        return space_from_pairs(catalog, [(str(n), int(s)) for n, s in data["configs"]])
    return enumerate_space(catalog, [int(s) for s in data.get("scale_outs", [])])


def encode_features(cfg: ClusterConfig, space: ConfigSpace) -> FeatureVector:
    """Normalized feature vector of ``cfg`` relative to ``space``.

    Dimensions with zero range over the space encode as 0.5.
    """
    row = space.feature_matrix[space.index_of(cfg)]
    return FeatureVector(tuple(float(v) for v in row))


@dataclass(frozen=True)
class PartitionParams:
    flat_fraction: float = 0.15
    flat_count: int | None = None
    per_node_overhead_gb: float = 2.0
    leeway_fraction: float = 0.10
    extreme_fraction: float = 0.10

    def __post_init__(self) -> None:
        if not 0 < self.flat_fraction <= 1:
            raise ConfigurationError(f"flat_fraction must be in (0, 1] (got {self.flat_fraction})")
        if self.flat_count is not None and self.flat_count < 1:
            raise ConfigurationError(f"flat_count must be >= 1 (got {self.flat_count})")
        if self.per_node_overhead_gb < 0:
            raise ConfigurationError("per_node_overhead_gb must be >= 0")
        if self.leeway_fraction < 0:
            raise ConfigurationError("leeway_fraction must be >= 0")
        if not 0 < self.extreme_fraction <= 0.5:
            raise ConfigurationError(
                f"extreme_fraction must be in (0, 0.5] (got {self.extreme_fraction})"
            )

    @classmethod
    def from_config(cls, **overrides: Any) -> "PartitionParams":
        values = {
            "flat_fraction": float(config.get("partition.flat_fraction", 0.15)),
            "flat_count": config.get("partition.flat_count"),
            "per_node_overhead_gb": float(config.get("partition.per_node_overhead_gb", 2.0)),
            "leeway_fraction": float(config.get("partition.leeway_fraction", 0.10)),
            "extreme_fraction": float(config.get("partition.extreme_fraction", 0.10)),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class PriorityPartition:
    """Config ids searched first, and the rest."""
    priority: frozenset[int]
    remainder: frozenset[int]
    reason: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not self.priority:
            raise ConfigurationError("priority set must not be empty")
        if self.priority & self.remainder:
            raise ConfigurationError("priority and remainder overlap")

    @classmethod
    def full(cls, space: ConfigSpace, reason: str = "full space") -> "PriorityPartition":
        return cls(priority=frozenset(space.ids), remainder=frozenset(), reason=reason)

    def covers(self, space: ConfigSpace) -> bool:
        return self.priority | self.remainder == frozenset(space.ids)


def _memory_order(space: ConfigSpace, descending: bool = False) -> list[int]:
    # (metric, hourly cost, id) is a total order
    sign = -1.0 if descending else 1.0
    return sorted(
        space.ids,
        key=lambda i: (sign * space[i].total_memory_gb, space[i].hourly_cost, i),
    )


def usable_memory_gb(cfg: ClusterConfig, params: PartitionParams) -> float:
    return cfg.total_memory_gb - cfg.scale_out * params.per_node_overhead_gb


def build_priority_partition(
    space: ConfigSpace,
    model: MemoryModel,
    req: MemoryRequirement | None,
    params: PartitionParams | None = None,
) -> PriorityPartition:
    """Split the space into configs searched first and the remainder."""
    params = params or PartitionParams.from_config()
    all_ids = frozenset(space.ids)
    category = model.category

    if category is MemoryCategory.LINEAR and req is None:
        raise ConfigurationError("linear memory model needs a memory requirement")
    if category is not MemoryCategory.LINEAR and req is not None:
        raise ConfigurationError(f"{category.value} memory model takes no requirement")

    if category is MemoryCategory.UNCLEAR:
        return PriorityPartition.full(space, reason="unclear memory behavior")

    if category is MemoryCategory.FLAT:
        if params.flat_count is not None:
            k = params.flat_count
        else:
            k = math.ceil(params.flat_fraction * len(space))
        k = max(1, min(k, len(space)))
        priority = frozenset(_memory_order(space)[:k])
        logger.info("Flat job: prioritizing %d lowest-memory configs of %d", k, len(space))
        return PriorityPartition(priority, all_ids - priority, reason="lowest total memory")

    needed_gb = req.job_gb * (1.0 + params.leeway_fraction)
    fitting = frozenset(
        i for i in space.ids if usable_memory_gb(space[i], params) >= needed_gb
    )
    if fitting:
        logger.info(
            "Linear job: %d of %d configs provide %.1f GB usable memory",
            len(fitting), len(space), needed_gb,
        )
        return PriorityPartition(fitting, all_ids - fitting, reason="meets memory requirement")

    q = max(1, math.ceil(params.extreme_fraction * len(space)))
    extremes = frozenset(_memory_order(space)[:q]) | frozenset(
        _memory_order(space, descending=True)[:q]
    )
    logger.info(
        "Linear job: no config provides %.1f GB, prioritizing %d memory extremes",
        needed_gb, len(extremes),
    )
    return PriorityPartition(extremes, all_ids - extremes, reason="memory extremes")
