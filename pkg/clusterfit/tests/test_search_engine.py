"""Tests for the priority-first search and the baseline search."""

from unittest.mock import patch

import numpy as np
import pytest

from clusterfit.core.bayes_opt import Candidate, GpHyperparams, gp_fit, refit_length_scale, select_next
from clusterfit.core.config_space import MachineType, PriorityPartition, enumerate_space
from clusterfit.core.errors import ConfigurationError, SearchError
from clusterfit.core.search_engine import (
    CostOracle,
    OracleResult,
    SearchParams,
    StopReason,
    run_baseline_search,
    run_priority_search,
)

HP = GpHyperparams.isotropic(4, 0.3)


class DictOracle(CostOracle):
    def __init__(self, costs, fail_on=None):
        self.costs = dict(costs)
        self.fail_on = fail_on
        self.calls = []

    def query(self, config_id):
        self.calls.append(config_id)
        if config_id == self.fail_on:
            raise RuntimeError("executor lost")
        return OracleResult(cost=self.costs[config_id], runtime_s=60.0)


def _space(n_types=3, scale_outs=(2, 4, 8, 16)):
    catalog = [
        MachineType(f"t{k}", cores=2 ** (k % 3), memory_gb=4.0 * (k + 1), price_per_hour=0.1 * (k + 1))
        for k in range(n_types)
    ]
    return enumerate_space(catalog, list(scale_outs))


def _costs(space, seed):
    rng = np.random.default_rng(seed)
    return {i: float(rng.uniform(1.0, 10.0)) for i in space.ids}


def _exhaustive(**kwargs):
    return SearchParams(stop_on_convergence=False, **kwargs)


def test_unclear_partition_equals_baseline():
    for seed in range(5):
        space = _space()
        costs = _costs(space, seed)
        params = SearchParams(seed=seed)
        full = PriorityPartition.full(space)
        a = run_priority_search(space, full, DictOracle(costs), params, HP)
        b = run_baseline_search(space, DictOracle(costs), params, HP)
        assert a == b


def test_priority_configs_come_first():
    space = _space()
    costs = _costs(space, 3)
    priority = frozenset({0, 4, 5, 9})
    part = PriorityPartition(priority, frozenset(space.ids) - priority)
    trace = run_priority_search(space, part, DictOracle(costs), _exhaustive(seed=1), HP)

    ids = trace.config_ids
    assert set(ids[:4]) == priority
    assert trace.phase_boundaries == (5,)
    assert sorted(ids) == list(space.ids)
    assert trace.stop_reason is StopReason.EXHAUSTED


def test_single_priority_config_observed_first():
    space = _space(n_types=1)   # 4 configs
    costs = {0: 5.0, 1: 1.0, 2: 3.0, 3: 4.0}
    part = PriorityPartition(frozenset({1}), frozenset({0, 2, 3}))
    params = _exhaustive(n_initial=1, min_observations=1)
    trace = run_priority_search(space, part, DictOracle(costs), params, HP)
    assert trace.config_ids[0] == 1
    assert trace.best.config_id == 1
    assert len(trace) == 4


def test_initial_draws_from_priority_set():
    space = _space()
    costs = _costs(space, 0)
    priority = frozenset({1, 2, 3, 7, 8})
    part = PriorityPartition(priority, frozenset(space.ids) - priority)
    for seed in range(10):
        trace = run_priority_search(space, part, DictOracle(costs), _exhaustive(seed=seed), HP)
        assert set(trace.config_ids[:3]) <= priority


def test_initial_draws_from_whole_space_keep_priority_order():
    space = _space()
    costs = _costs(space, 0)
    priority = frozenset({1, 2, 3, 7, 8})
    part = PriorityPartition(priority, frozenset(space.ids) - priority)
    drew_outside = False
    for seed in range(20):
        params = _exhaustive(seed=seed, init_from_full=True)
        trace = run_priority_search(space, part, DictOracle(costs), params, HP)
        ids = trace.config_ids
        drew_outside |= not set(ids[:3]) <= priority
        rest = ids[3:]
        unseen = len(priority - set(ids[:3]))
        assert set(rest[:unseen]) == priority - set(ids[:3])
        assert sorted(ids) == list(space.ids)
    assert drew_outside


def test_single_config_space():
    space = _space(n_types=1, scale_outs=(4,))
    trace = run_baseline_search(space, DictOracle({0: 2.0}), SearchParams(), HP)
    assert trace.config_ids == [0]
    assert trace.stop_reason is StopReason.EXHAUSTED


def test_seeded_determinism():
    space = _space()
    costs = _costs(space, 4)
    a = run_baseline_search(space, DictOracle(costs), SearchParams(seed=9), HP)
    b = run_baseline_search(space, DictOracle(costs), SearchParams(seed=9), HP)
    assert a == b
    assert a.to_dict() == b.to_dict()


def test_trace_invariants_with_stopping():
    for seed in range(10):
        space = _space()
        costs = _costs(space, seed + 100)
        trace = run_baseline_search(space, DictOracle(costs), SearchParams(seed=seed), HP)
        ids = trace.config_ids
        assert len(ids) == len(set(ids))
        assert len(ids) <= len(space)
        best = trace.best_so_far()
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert [o.iteration for o in trace.observations] == list(range(1, len(ids) + 1))
        if trace.stop_reason is StopReason.CONVERGED:
            assert len(ids) >= 6


def test_max_iterations():
    space = _space()
    trace = run_baseline_search(
        space, DictOracle(_costs(space, 1)), _exhaustive(max_iterations=5), HP
    )
    assert len(trace) == 5
    assert trace.stop_reason is StopReason.MAX_ITERATIONS


def test_matches_reference_loop():
    space = _space(n_types=3, scale_outs=(4, 8))   # 6 configs
    costs = {0: 4.0, 1: 2.5, 2: 3.0, 3: 1.2, 4: 6.0, 5: 2.0}
    params = _exhaustive(seed=21)
    trace = run_baseline_search(space, DictOracle(costs), params, HP)

    rng = np.random.default_rng(21)
    observed = [int(c) for c in rng.choice(sorted(space.ids), size=3, replace=False)]
    features = space.feature_matrix
    while len(observed) < len(space):
        y = [costs[c] for c in observed]
        model = gp_fit(features[observed], y, HP)
        pending = [c for c in sorted(space.ids) if c not in observed]
        cands = [Candidate(c, features[c], float(space.hourly_costs[c])) for c in pending]
        observed.append(select_next(model, cands, min(y)).config_id)
    assert trace.config_ids == observed


def test_oracle_failure_keeps_partial_trace():
    space = _space()
    costs = _costs(space, 2)
    oracle = DictOracle(costs)
    first = run_baseline_search(space, oracle, _exhaustive(seed=0), HP).config_ids
    failing = DictOracle(costs, fail_on=first[4])
    with pytest.raises(SearchError) as exc:
        run_baseline_search(space, failing, _exhaustive(seed=0), HP)
    assert exc.value.trace.config_ids == first[:4]


def test_partition_must_cover_space():
    space = _space()
    part = PriorityPartition(frozenset({0, 1}), frozenset({2}))
    with pytest.raises(ConfigurationError):
        run_priority_search(space, part, DictOracle(_costs(space, 0)), SearchParams(), HP)


def test_params_validation():
    with pytest.raises(ConfigurationError):
        SearchParams(n_initial=0)
    with pytest.raises(ConfigurationError):
        SearchParams(n_initial=4, min_observations=3)
    with pytest.raises(ConfigurationError):
        SearchParams(ei_stop_fraction=1.5)


def test_flat_landscape_converges_at_min_observations():
    space = _space()
    costs = {i: 1000.0 for i in space.ids}
    for seed in range(5):
        trace = run_baseline_search(space, DictOracle(costs), SearchParams(seed=seed), HP)
        assert trace.stop_reason is StopReason.CONVERGED
        assert len(trace) == 6


def test_small_priority_set_defers_stopping_to_remainder():
    space = _space()
    costs = {i: 1000.0 for i in space.ids}
    priority = frozenset({0, 4, 5, 9})
    part = PriorityPartition(priority, frozenset(space.ids) - priority)
    trace = run_priority_search(space, part, DictOracle(costs), SearchParams(seed=2), HP)
    assert set(trace.config_ids[:4]) == priority
    assert trace.phase_boundaries == (5,)
    assert trace.stop_reason is StopReason.CONVERGED
    assert len(trace) == 6


def test_refit_grid_comes_from_config():
    values = {"gp.refit": True, "gp.refit_grid": [0.5, 2.0]}
    with patch("clusterfit.config.get", side_effect=lambda k, d=None: values.get(k, d)):
        params = SearchParams.from_config(stop_on_convergence=False, seed=1)
    assert params.refit_hyperparams is True
    assert params.refit_grid == (0.5, 2.0)

    space = _space(n_types=2, scale_outs=(2, 4))
    with patch(
        "clusterfit.core.search_engine.refit_length_scale", wraps=refit_length_scale
    ) as refit:
        trace = run_baseline_search(space, DictOracle(_costs(space, 5)), params, HP)
    assert len(trace) == len(space)
    assert refit.call_count == len(space) - 3
    assert all(call.args[3] == (0.5, 2.0) for call in refit.call_args_list)


def test_refit_grid_validation():
    with pytest.raises(ConfigurationError):
        SearchParams(refit_grid=())
    with pytest.raises(ConfigurationError):
        SearchParams(refit_grid=(0.3, 0.0))
