"""Replay baseline and priority searches over measured tables and score them.

Each (job, seed) pair runs both methods with the same seed. A run's quality
is the iteration at which its best-so-far normalized cost first drops to a
threshold; ``1.0`` means the cheapest configuration itself was observed.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from clusterfit import config
from clusterfit.core.bayes_opt import GpHyperparams
from clusterfit.core.config_space import (
    FEATURE_NAMES,
    PartitionParams,
    PriorityPartition,
    build_priority_partition,
)
from clusterfit.core.errors import ConfigurationError
from clusterfit.core.search_engine import (
    SearchParams,
    SearchTrace,
    run_baseline_search,
    run_priority_search,
)
from clusterfit.replay.table import JobCategory, JobTable, ReplayOracle, ReplayTable, normalize_costs

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (1.2, 1.1, 1.0)
METHODS = ("baseline", "priority")


def threshold_label(threshold: float) -> str:
    return "c=1.0" if threshold == 1.0 else f"c<={threshold:g}"


def iterations_to_thresholds(
    trace: SearchTrace,
    normalized: dict[int, float],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> dict[float, int | None]:
    """First 1-based iteration whose best-so-far normalized cost meets each threshold.

    1.0 is reached only by observing a config of the optimum set, the
    configs whose normalized cost is exactly 1.0.
    """
    optimum = {cid for cid, c in normalized.items() if c == 1.0}
    out: dict[float, int | None] = {t: None for t in thresholds}
    best = math.inf
    found_optimum = False
    for k, cid in enumerate(trace.config_ids, start=1):
        if cid not in normalized:
            raise ConfigurationError(f"trace config {cid} has no normalized cost")
        best = min(best, normalized[cid])
        found_optimum = found_optimum or cid in optimum
        for t in thresholds:
            if out[t] is not None:
                continue
            reached = found_optimum if t == 1.0 else best <= t
            if reached:
                out[t] = k
    return out


@dataclass
class MethodSummary:
    mean_iterations: dict[float, float | None]
    unreached: dict[float, int]


@dataclass
class JobComparison:
    job: str
    category: str
    space_size: int
    priority_size: int
    baseline: MethodSummary
    priority: MethodSummary

    def quotients(self) -> dict[float, float | None]:
        return _quotients(self.priority.mean_iterations, self.baseline.mean_iterations)


@dataclass
class TraceRecord:
    job: str
    seed: int
    method: str
    trace: SearchTrace
    normalized: list[float]


@dataclass
class ComparisonReport:
    thresholds: tuple[float, ...]
    seeds: tuple[int, ...]
    exhaustive: bool
    jobs: list[JobComparison]
    overall: dict[str, dict[float, float | None]]
    best_cost_series: dict[str, list[float]]
    cumulative_cost_series: dict[str, list[float]]
    traces: list[TraceRecord] = field(default_factory=list)

    def overall_quotients(self) -> dict[float, float | None]:
        return _quotients(self.overall["priority"], self.overall["baseline"])

    def job(self, name: str) -> JobComparison:
        for jc in self.jobs:
            if jc.job == name:
                return jc
        raise KeyError(name)


def _quotients(
    num: dict[float, float | None], den: dict[float, float | None]
) -> dict[float, float | None]:
    out: dict[float, float | None] = {}
    for t in num:
        a, b = num[t], den.get(t)
        out[t] = a / b if a is not None and b else None
    return out


def _mean(values: Iterable[float]) -> float | None:
    vals = list(values)
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class _ReplayTask:
    job: JobTable
    partition: PriorityPartition
    params: SearchParams
    hp: GpHyperparams
    seed: int


def _run_task(task: _ReplayTask) -> tuple[SearchTrace, SearchTrace]:
    params = task.params.with_seed(task.seed)
    space = task.job.space
    baseline = run_baseline_search(space, ReplayOracle(task.job), params, task.hp)
    priority = run_priority_search(space, task.partition, ReplayOracle(task.job), params, task.hp)
    return baseline, priority


def _run_all(tasks: list[_ReplayTask], workers: int) -> list[tuple[SearchTrace, SearchTrace]]:
    if workers <= 1 or len(tasks) < 2:
        return [_run_task(t) for t in tasks]
    results: dict[int, tuple[SearchTrace, SearchTrace]] = {}
    with ProcessPoolExecutor(max_workers=workers) as executor:
        fut_to_idx = {executor.submit(_run_task, t): i for i, t in enumerate(tasks)}
        for fut in as_completed(fut_to_idx):
            results[fut_to_idx[fut]] = fut.result()
    return [results[i] for i in range(len(tasks))]


def _series(costs: list[float], length: int) -> tuple[np.ndarray, np.ndarray]:
    """Best-so-far and cumulative normalized cost, padded to ``length``.

    After a trace ends every further execution runs on the best config found.
    """
    best = np.minimum.accumulate(costs)
    cumulative = np.cumsum(costs)
    pad = length - len(costs)
    if pad > 0:
        best = np.concatenate([best, np.full(pad, best[-1])])
        cumulative = np.concatenate([cumulative, cumulative[-1] + best[-1] * np.arange(1, pad + 1)])
    return best[:length], cumulative[:length]


def compare_methods(
    table: ReplayTable,
    jobs: Sequence[str] | None,
    categories: dict[str, JobCategory],
    params: SearchParams | None = None,
    n_seeds: int | None = None,
    *,
    seeds: Sequence[int] | None = None,
    partition_params: PartitionParams | None = None,
    hp: GpHyperparams | None = None,
    thresholds: Sequence[float] | None = None,
    workers: int | None = None,
    exhaustive: bool | None = None,
    keep_traces: bool = False,
) -> ComparisonReport:
    """Replay both methods on every job with paired seeds and aggregate.

    ``seeds`` wins over ``n_seeds``, which means seeds 0..n_seeds-1. In
    exhaustive mode the stopping rule is off so every trace ends at the
    optimum; otherwise unreached thresholds are left out of the means and
    counted.
    """
    names = sorted(jobs) if jobs else table.job_names
    missing = [j for j in names if j not in categories]
    if missing:
        raise ConfigurationError(f"no memory category for jobs: {', '.join(missing)}")
    if seeds is None:
        n_seeds = n_seeds if n_seeds is not None else int(config.get("replay.seeds", 200))
        seeds = range(n_seeds)
    seed_list = tuple(sorted({int(s) for s in seeds}))
    if not seed_list:
        raise ConfigurationError("at least one seed is required")
    thresholds = tuple(thresholds or config.get("replay.thresholds", list(DEFAULT_THRESHOLDS)))
    workers = int(workers if workers is not None else config.get("replay.workers", 1))
    exhaustive = bool(config.get("replay.exhaustive", True) if exhaustive is None else exhaustive)
    params = params or SearchParams.from_config()
    if exhaustive:
        params = replace(params, stop_on_convergence=False)
    hp = hp or GpHyperparams.from_config(len(FEATURE_NAMES))
    partition_params = partition_params or PartitionParams.from_config()

    tasks: list[_ReplayTask] = []
    partitions: dict[str, PriorityPartition] = {}
    for name in names:
        jt = table[name]
        cat = categories[name]
        partitions[name] = build_priority_partition(
            jt.space, cat.model, cat.requirement, partition_params
        )
        tasks.extend(_ReplayTask(jt, partitions[name], params, hp, s) for s in seed_list)

    logger.info(
        "Replaying %d jobs x %d seeds (%s, %d workers)",
        len(names), len(seed_list), "exhaustive" if exhaustive else "with stopping", workers,
    )
    outcomes = _run_all(tasks, workers)

    length = max(len(table[n].space) for n in names)
    best_sum = {m: np.zeros(length) for m in METHODS}
    cum_sum = {m: np.zeros(length) for m in METHODS}
    comparisons: list[JobComparison] = []
    records: list[TraceRecord] = []
    per_job: dict[str, dict[str, dict[float, list[int | None]]]] = {
        n: {m: {t: [] for t in thresholds} for m in METHODS} for n in names
    }

    normalized_by_job = {n: normalize_costs(table, n) for n in names}
    for task, traces in zip(tasks, outcomes):
        name = task.job.name
        normalized = normalized_by_job[name]
        for method, trace in zip(METHODS, traces):
            hits = iterations_to_thresholds(trace, normalized, thresholds)
            for t in thresholds:
                per_job[name][method][t].append(hits[t])
            costs = [normalized[cid] for cid in trace.config_ids]
            best, cum = _series(costs, length)
            best_sum[method] += best
            cum_sum[method] += cum
            if keep_traces:
                records.append(TraceRecord(name, task.seed, method, trace, costs))

    for name in names:
        summaries = {}
        for method in METHODS:
            hits = per_job[name][method]
            summaries[method] = MethodSummary(
                mean_iterations={t: _mean(i for i in hits[t] if i is not None) for t in thresholds},
                unreached={t: sum(1 for i in hits[t] if i is None) for t in thresholds},
            )
        jc = JobComparison(
            job=name,
            category=categories[name].model.category.value,
            space_size=len(table[name].space),
            priority_size=len(partitions[name].priority),
            baseline=summaries["baseline"],
            priority=summaries["priority"],
        )
        comparisons.append(jc)
        logger.info(
            "%s (%s): optimum after %s vs %s iterations",
            name, jc.category,
            _fmt(jc.baseline.mean_iterations.get(1.0)), _fmt(jc.priority.mean_iterations.get(1.0)),
        )

    overall = {
        method: {
            t: _mean(
                v for jc in comparisons
                if (v := getattr(jc, method).mean_iterations[t]) is not None
            )
            for t in thresholds
        }
        for method in METHODS
    }
    runs = len(tasks)
    return ComparisonReport(
        thresholds=thresholds,
        seeds=seed_list,
        exhaustive=exhaustive,
        jobs=comparisons,
        overall=overall,
        best_cost_series={m: list(best_sum[m] / runs) for m in METHODS},
        cumulative_cost_series={m: list(cum_sum[m] / runs) for m in METHODS},
        traces=records,
    )


def _fmt(value: float | None, digits: int = 3) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def _pct(value: float | None) -> str:
    return "" if value is None else f"{100.0 * value:.1f}"


def write_report(
    report: ComparisonReport, out_dir: Path | str, write_traces: bool = False
) -> list[Path]:
    """Write comparison.csv plus the two per-iteration series (and traces.csv)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = [threshold_label(t) for t in report.thresholds]
    written: list[Path] = []

    path = out / "comparison.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            ["job", "category", "space_size", "priority_size"]
            + [f"baseline {lb}" for lb in labels]
            + [f"priority {lb}" for lb in labels]
            + [f"quotient % {lb}" for lb in labels]
            + ["unreached baseline", "unreached priority"]
        )
        for jc in report.jobs:
            q = jc.quotients()
            writer.writerow(
                [jc.job, jc.category, jc.space_size, jc.priority_size]
                + [_fmt(jc.baseline.mean_iterations[t]) for t in report.thresholds]
                + [_fmt(jc.priority.mean_iterations[t]) for t in report.thresholds]
                + [_pct(q[t]) for t in report.thresholds]
                + [sum(jc.baseline.unreached.values()), sum(jc.priority.unreached.values())]
            )
        q = report.overall_quotients()
        writer.writerow(
            ["mean", "", "", ""]
            + [_fmt(report.overall["baseline"][t]) for t in report.thresholds]
            + [_fmt(report.overall["priority"][t]) for t in report.thresholds]
            + [_pct(q[t]) for t in report.thresholds]
            + [
                sum(sum(jc.baseline.unreached.values()) for jc in report.jobs),
                sum(sum(jc.priority.unreached.values()) for jc in report.jobs),
            ]
        )
    written.append(path)

    for filename, column, series in (
        ("best_cost_series.csv", "mean_best_cost", report.best_cost_series),
        ("cumulative_cost_series.csv", "mean_cumulative_cost", report.cumulative_cost_series),
    ):
        path = out / filename
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["iteration", "method", column])
            for method in METHODS:
                for k, value in enumerate(series[method], start=1):
                    writer.writerow([k, method, f"{value:.6f}"])
        written.append(path)

    if write_traces and report.traces:
        path = out / "traces.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(
                ["job", "method", "seed", "iteration", "config_id", "cost", "normalized_cost"]
            )
            for rec in sorted(report.traces, key=lambda r: (r.job, r.method, r.seed)):
                for obs, norm in zip(rec.trace.observations, rec.normalized):
                    writer.writerow([
                        rec.job, rec.method, rec.seed, obs.iteration, obs.config_id,
                        f"{obs.cost:.9f}", f"{norm:.6f}",
                    ])
        written.append(path)
    logger.info("Wrote %d report files to %s", len(written), out)
    return written


def report_summary(report: ComparisonReport) -> dict[str, Any]:
    """Plain-data summary of the overall row, for manifests and console output."""
    return {
        "seeds": len(report.seeds),
        "exhaustive": report.exhaustive,
        "jobs": len(report.jobs),
        "overall": {
            method: {threshold_label(t): report.overall[method][t] for t in report.thresholds}
            for method in METHODS
        },
        "quotients": {threshold_label(t): v for t, v in report.overall_quotients().items()},
    }
