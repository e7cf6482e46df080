"""Synthetic replay benchmark with memory bottlenecks.

Sixty configurations: three families (compute, general, memory optimized) in
two sizes, each scaled out to ten node counts. Runtime follows a simple
work / cores + start-up model with per-config noise. On top of that:

- linear jobs run 2-5x longer on every config whose usable memory is below
  the job's requirement, and their optimum sits among the configs that fit
- flat jobs have no memory effect, their optimum is among the lowest-memory
  configs
- unclear jobs get a smooth partial-spill slowdown and no forced optimum
"""

from __future__ import annotations

import logging

import numpy as np

from clusterfit.core.config_space import (
    ConfigSpace,
    MachineType,
    PartitionParams,
    build_priority_partition,
    enumerate_space,
    usable_memory_gb,
)
from clusterfit.core.errors import ConfigurationError
from clusterfit.core.memory_model import MemoryCategory, MemoryModel, MemoryRequirement
from clusterfit.replay.table import JobCategory, JobTable, ReplayEntry, ReplayTable

logger = logging.getLogger(__name__)

SYNTHETIC_CATALOG = (
    MachineType("c4.large", cores=2, memory_gb=4.0, price_per_hour=0.085),
    MachineType("c4.xlarge", cores=4, memory_gb=8.0, price_per_hour=0.17),
    MachineType("m4.large", cores=2, memory_gb=8.0, price_per_hour=0.096),
    MachineType("m4.xlarge", cores=4, memory_gb=16.0, price_per_hour=0.192),
    MachineType("r4.large", cores=2, memory_gb=16.0, price_per_hour=0.126),
    MachineType("r4.xlarge", cores=4, memory_gb=32.0, price_per_hour=0.252),
)
SYNTHETIC_SCALE_OUTS = (4, 6, 8, 10, 12, 16, 20, 24, 32, 48)

_STARTUP_S = 30.0
_OPTIMUM_MARGIN = 0.9


def synthetic_space() -> ConfigSpace:
    return enumerate_space(SYNTHETIC_CATALOG, SYNTHETIC_SCALE_OUTS)


def _force_optimum(costs: np.ndarray, within: frozenset[int]) -> None:
    """Make the cheapest config of ``within`` the unique global optimum."""
    inside = sorted(within)
    best = inside[int(np.argmin(costs[inside]))]
    others = np.delete(costs, best)
    costs[best] = min(costs[best], _OPTIMUM_MARGIN * float(others.min()))


def _job(
    kind: MemoryCategory,
    index: int,
    space: ConfigSpace,
    rng: np.random.Generator,
    params: PartitionParams,
) -> tuple[np.ndarray, np.ndarray, JobCategory]:
    cores = np.array([c.total_cores for c in space], dtype=float)
    hourly = np.asarray(space.hourly_costs, dtype=float)
    usable = np.array([usable_memory_gb(c, params) for c in space], dtype=float)
    work = rng.uniform(3e4, 1.2e5)   # core-seconds
    runtime = work / cores + _STARTUP_S

    if kind is MemoryCategory.UNCLEAR:
        reference = float(np.quantile(usable, 0.5))
        severity = rng.uniform(1.0, 3.0)
        runtime *= 1.0 + severity * np.clip(1.0 - usable / reference, 0.0, None)
        runtime *= rng.uniform(0.95, 1.05, size=len(space))
        category = JobCategory(MemoryModel.declared(kind))
        costs = runtime / 3600.0 * hourly
        return runtime, costs, category

    runtime *= rng.uniform(0.85, 1.15, size=len(space))
    if kind is MemoryCategory.LINEAR:
        needed = float(np.quantile(usable, rng.uniform(0.75, 0.9)))
        category = JobCategory(
            MemoryModel.declared(kind),
            MemoryRequirement(job_gb=needed / (1.0 + params.leeway_fraction)),
        )
    else:
        category = JobCategory(MemoryModel.declared(kind))
    priority = build_priority_partition(
        space, category.model, category.requirement, params
    ).priority
    if kind is MemoryCategory.LINEAR:
        below = np.array([i not in priority for i in space.ids])
        runtime[below] *= rng.uniform(2.0, 5.0, size=int(below.sum()))

    costs = runtime / 3600.0 * hourly
    _force_optimum(costs, priority)
    runtime = costs * 3600.0 / hourly
    logger.debug("Synthetic %s job %d: %d priority configs", kind.value, index, len(priority))
    return runtime, costs, category


def generate_benchmark(
    n_linear: int = 4,
    n_flat: int = 4,
    n_unclear: int = 4,
    seed: int = 0,
    partition_params: PartitionParams | None = None,
) -> tuple[ReplayTable, dict[str, JobCategory]]:
    """Build a replay table and matching category sidecar.

    Each job draws from its own stream seeded by (seed, job number), so a
    job's data depends only on the seed and its place in the plan.
    """
    if min(n_linear, n_flat, n_unclear) < 0 or n_linear + n_flat + n_unclear == 0:
        raise ConfigurationError("job counts must be >= 0 and not all zero")
    params = partition_params or PartitionParams.from_config()
    space = synthetic_space()
    table = ReplayTable()
    categories: dict[str, JobCategory] = {}

    plan = (
        [(MemoryCategory.LINEAR, i) for i in range(n_linear)]
        + [(MemoryCategory.FLAT, i) for i in range(n_flat)]
        + [(MemoryCategory.UNCLEAR, i) for i in range(n_unclear)]
    )
    for number, (kind, index) in enumerate(plan):
        rng = np.random.default_rng([seed, number])
        runtime, costs, category = _job(kind, index, space, rng, params)
        name = f"synth-{kind.value}-{index}"
        entries = {
            cid: ReplayEntry(runtime_s=float(runtime[cid]), cost=float(costs[cid]))
            for cid in space.ids
        }
        table.jobs[name] = JobTable(name, space, entries, framework="synthetic")
        categories[name] = category

    logger.info(
        "Generated %d synthetic jobs (%d linear, %d flat, %d unclear) over %d configs",
        len(table), n_linear, n_flat, n_unclear, len(space),
    )
    return table, categories
