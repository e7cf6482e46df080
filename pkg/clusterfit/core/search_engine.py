"""Priority-first Bayesian-optimized configuration search, and the plain baseline.

The priority search runs the usual GP + expected-improvement loop over the
priority configs first; only once every priority config has been tried does
it open the remainder, keeping all observations in the surrogate. The baseline
is the same loop with a single phase covering the whole space, so an
all-priority partition reproduces the baseline observation for observation.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, NamedTuple

import numpy as np

from clusterfit import config
from clusterfit.core.bayes_opt import (
    Candidate,
    GpHyperparams,
    gp_fit,
    refit_length_scale,
    select_next,
)
from clusterfit.core.config_space import ConfigSpace, PriorityPartition
from clusterfit.core.errors import ConfigurationError, SearchError

logger = logging.getLogger(__name__)


class StopReason(str, Enum):
    CONVERGED = "converged"
    EXHAUSTED = "exhausted"
    MAX_ITERATIONS = "max_iterations"


class OracleResult(NamedTuple):
    cost: float
    runtime_s: float


class CostOracle(ABC):
    """Answers what running the job on a config costs."""

    @abstractmethod
    def query(self, config_id: int) -> OracleResult:
        ...


@dataclass(frozen=True)
class SearchParams:
    n_initial: int = 3
    ei_stop_fraction: float = 0.1
    min_observations: int = 6
    max_iterations: int | None = None   # None: size of the space
    seed: int = 0
    init_from_full: bool = False
    stop_on_convergence: bool = True
    refit_hyperparams: bool = False
    refit_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5, 1.0)

    def __post_init__(self) -> None:
        if self.n_initial < 1:
            raise ConfigurationError(f"n_initial must be >= 1 (got {self.n_initial})")
        if not 0 < self.ei_stop_fraction < 1:
            raise ConfigurationError(
                f"ei_stop_fraction must be in (0, 1) (got {self.ei_stop_fraction})"
            )
        if self.min_observations < self.n_initial:
            raise ConfigurationError("min_observations must be >= n_initial")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not self.refit_grid or min(self.refit_grid) <= 0:
            raise ConfigurationError("refit_grid needs positive length scales")

    @classmethod
    def from_config(cls, **overrides: Any) -> "SearchParams":
        values = {
            "n_initial": int(config.get("search.n_initial", 3)),
            "ei_stop_fraction": float(config.get("search.ei_stop_fraction", 0.1)),
            "min_observations": int(config.get("search.min_observations", 6)),
            "max_iterations": config.get("search.max_iterations"),
            "init_from_full": bool(config.get("search.init_from_full", False)),
            "refit_hyperparams": bool(config.get("gp.refit", False)),
            "refit_grid": tuple(
                float(v) for v in config.get("gp.refit_grid", (0.1, 0.2, 0.3, 0.5, 1.0))
            ),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_seed(self, seed: int) -> "SearchParams":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Observation:
    config_id: int
    cost: float
    runtime_s: float
    iteration: int


@dataclass(frozen=True)
class SearchTrace:
    observations: tuple[Observation, ...]
    phase_boundaries: tuple[int, ...] = ()
    stop_reason: StopReason = StopReason.EXHAUSTED

    @property
    def config_ids(self) -> list[int]:
        return [o.config_id for o in self.observations]

    @property
    def costs(self) -> list[float]:
        return [o.cost for o in self.observations]

    def best_so_far(self) -> list[float]:
        return list(np.minimum.accumulate(self.costs)) if self.observations else []

    @property
    def best(self) -> Observation | None:
        if not self.observations:
            return None
        return min(self.observations, key=lambda o: (o.cost, o.iteration))

    def __len__(self) -> int:
        return len(self.observations)

    def to_dict(self) -> dict[str, Any]:
        return {
            "stop_reason": self.stop_reason.value,
            "phase_boundaries": list(self.phase_boundaries),
            "observations": [
                {"iteration": o.iteration, "config_id": o.config_id,
                 "cost": o.cost, "runtime_s": o.runtime_s}
                for o in self.observations
            ],
        }


@dataclass
class _SearchState:
    space: ConfigSpace
    oracle: CostOracle
    observations: list[Observation] = field(default_factory=list)
    seen: set[int] = field(default_factory=set)

    def observe(self, config_id: int) -> None:
        try:
            result = self.oracle.query(config_id)
        except Exception as e:
            raise SearchError(
                f"cost oracle failed for config {config_id}: {e}",
                trace=self.trace(StopReason.EXHAUSTED),
            ) from e
        obs = Observation(
            config_id=config_id,
            cost=float(result.cost),
            runtime_s=float(result.runtime_s),
            iteration=len(self.observations) + 1,
        )
        self.observations.append(obs)
        self.seen.add(config_id)
        logger.debug("Iteration %d: %s cost=%.6g", obs.iteration,
                     self.space[config_id].label, obs.cost)

    def trace(self, reason: StopReason, boundaries: list[int] | None = None) -> SearchTrace:
        return SearchTrace(tuple(self.observations), tuple(boundaries or ()), reason)


def _search(
    space: ConfigSpace,
    phases: list[list[int]],
    oracle: CostOracle,
    params: SearchParams,
    hp: GpHyperparams | None,
) -> SearchTrace:
    features = space.feature_matrix
    hp = hp or GpHyperparams.from_config(features.shape[1])
    max_iter = min(params.max_iterations or len(space), len(space))
    rng = np.random.default_rng(params.seed)
    state = _SearchState(space, oracle)
    boundaries: list[int] = []

    pool = sorted(space.ids) if params.init_from_full else sorted(phases[0])
    n_init = min(params.n_initial, len(pool), max_iter)
    if n_init < params.n_initial:
        logger.debug("Only %d initial configs available (wanted %d)", n_init, params.n_initial)
    for cid in rng.choice(pool, size=n_init, replace=False):
        state.observe(int(cid))

    for phase_no, phase in enumerate(phases):
        # stop checks wait for the remainder when the priority set is too small
        may_stop = params.stop_on_convergence and not (
            phase_no == 0 and len(phases) > 1 and len(phase) < params.min_observations
        )
        pending = [cid for cid in sorted(phase) if cid not in state.seen]
        if phase_no > 0 and pending and len(state.observations) < max_iter:
            boundaries.append(len(state.observations) + 1)
            logger.debug("Opening remainder phase at iteration %d", boundaries[-1])

        while pending:
            if len(state.observations) >= max_iter:
                return state.trace(StopReason.MAX_ITERATIONS, boundaries)
            x = features[[o.config_id for o in state.observations]]
            y = [o.cost for o in state.observations]
            fit_hp = (
                refit_length_scale(x, y, hp, params.refit_grid) if params.refit_hyperparams else hp
            )
            model = gp_fit(x, y, fit_hp)
            best_cost = min(y)
            candidates = [
                Candidate(cid, features[cid], float(space.hourly_costs[cid])) for cid in pending
            ]
            choice = select_next(model, candidates, best_cost)
            if choice is None:
                break
            if (
                may_stop
                and len(state.observations) >= params.min_observations
                and choice.ei < params.ei_stop_fraction * best_cost
            ):
                logger.debug("Converged: max EI %.4g < %.2f x best %.4g",
                             choice.ei, params.ei_stop_fraction, best_cost)
                return state.trace(StopReason.CONVERGED, boundaries)
            state.observe(choice.config_id)
            pending.remove(choice.config_id)

    if len(state.observations) >= max_iter and len(state.seen) < len(space):
        return state.trace(StopReason.MAX_ITERATIONS, boundaries)
    return state.trace(StopReason.EXHAUSTED, boundaries)


def run_priority_search(
    space: ConfigSpace,
    partition: PriorityPartition,
    oracle: CostOracle,
    params: SearchParams | None = None,
    hp: GpHyperparams | None = None,
) -> SearchTrace:
    """Search the priority configs exhaustively first, then the remainder."""
    if not partition.covers(space):
        raise ConfigurationError("partition does not cover the configuration space")
    params = params or SearchParams.from_config()
    phases = [sorted(partition.priority)]
    if partition.remainder:
        phases.append(sorted(partition.remainder))
    return _search(space, phases, oracle, params, hp)


def run_baseline_search(
    space: ConfigSpace,
    oracle: CostOracle,
    params: SearchParams | None = None,
    hp: GpHyperparams | None = None,
) -> SearchTrace:
    """Plain Bayesian optimization over the whole space."""
    params = params or SearchParams.from_config()
    return _search(space, [list(space.ids)], oracle, params, hp)
