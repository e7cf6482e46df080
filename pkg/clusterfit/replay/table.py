"""Measured (job, configuration, runtime, cost) tables and their category sidecars."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from clusterfit.core.config_space import ConfigSpace, MachineType, space_from_pairs
from clusterfit.core.errors import CompletenessError, ConfigurationError, ParseError
from clusterfit.core.memory_model import MemoryCategory, MemoryModel, MemoryRequirement
from clusterfit.core.search_engine import CostOracle, OracleResult

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = (
    "job", "machine_type", "cores", "memory_gb", "price_per_hour", "scale_out", "runtime_s",
)
OPTIONAL_COLUMNS = ("cost", "framework", "dataset_size")
CATEGORY_COLUMNS = ("job", "category", "job_gb")


@dataclass(frozen=True)
class ReplayEntry:
    runtime_s: float
    cost: float


@dataclass
class JobTable:
    """One job's measurements, indexed by config id of ``space``."""
    name: str
    space: ConfigSpace
    entries: dict[int, ReplayEntry]
    framework: str = ""
    dataset_size_label: str = ""

    def __post_init__(self) -> None:
        missing = [i for i in self.space.ids if i not in self.entries]
        if missing or len(self.entries) != len(self.space):
            raise CompletenessError(
                f"job {self.name}: entries do not match its space",
                gaps={self.name: [self.space[i].label for i in missing]},
            )
        if any(not e.cost > 0 for e in self.entries.values()):
            raise ConfigurationError(f"job {self.name}: costs must be > 0")

    @property
    def costs(self) -> np.ndarray:
        return np.array([self.entries[i].cost for i in self.space.ids], dtype=float)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class ReplayTable:
    jobs: dict[str, JobTable] = field(default_factory=dict)

    @property
    def job_names(self) -> list[str]:
        return sorted(self.jobs)

    def __getitem__(self, job: str) -> JobTable:
        try:
            return self.jobs[job]
        except KeyError:
            raise ConfigurationError(f"job {job!r} is not in the replay table") from None

    def __contains__(self, job: object) -> bool:
        return job in self.jobs

    def __iter__(self) -> Iterator[JobTable]:
        return (self.jobs[name] for name in self.job_names)

    def __len__(self) -> int:
        return len(self.jobs)


class ReplayOracle(CostOracle):
    """Answers cost queries from recorded measurements."""

    def __init__(self, job: JobTable) -> None:
        self.job = job
        self.queries = 0

    def query(self, config_id: int) -> OracleResult:
        entry = self.job.entries[config_id]
        self.queries += 1
        return OracleResult(cost=entry.cost, runtime_s=entry.runtime_s)


@dataclass(frozen=True)
class JobCategory:
    """Memory behavior declared for a replayed job."""
    model: MemoryModel
    requirement: MemoryRequirement | None = None


def _number(row: dict[str, str], column: str, line: int, cast=float):
    raw = (row.get(column) or "").strip()
    if not raw:
        raise ParseError(f"column {column!r} is empty", line=line)
    try:
        value = cast(raw) if cast is float else cast(float(raw))
    except ValueError:
        raise ParseError(f"column {column!r}: {raw!r} is not a number", line=line) from None
    if cast is int and float(raw) != value:
        raise ParseError(f"column {column!r}: {raw!r} is not an integer", line=line)
    return value


def _sniff_dialect(sample: str) -> type[csv.Dialect] | csv.Dialect:
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t")
    except csv.Error:
        return csv.excel


def load_replay_table(path: Path | str, allow_incomplete: bool = False) -> ReplayTable:
    """Read a replay table and rebuild each job's configuration space.

    Machine types are collected in order of first appearance. Every job must
    cover the union of all (machine type, scale-out) pairs in the file unless
    ``allow_incomplete`` is set, in which case short jobs get their own
    smaller space.
    """
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    reader = csv.DictReader(text.splitlines(), dialect=_sniff_dialect(text[:4096]))
    if reader.fieldnames is None:
        raise ParseError("replay table is empty", line=1)
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header
    missing_cols = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing_cols:
        raise ParseError(f"missing columns: {', '.join(missing_cols)}", line=1)
    has_cost = "cost" in header

    catalog: dict[str, MachineType] = {}
    rows: dict[str, dict[tuple[str, int], ReplayEntry]] = {}
    meta: dict[str, tuple[str, str]] = {}
    for row in reader:
        line = reader.line_num
        if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
            continue
        job = (row.get("job") or "").strip()
        name = (row.get("machine_type") or "").strip()
        if not job or not name:
            raise ParseError("job and machine_type must be set", line=line)
        try:
            mt = MachineType(
                name=name,
                cores=_number(row, "cores", line, int),
                memory_gb=_number(row, "memory_gb", line),
                price_per_hour=_number(row, "price_per_hour", line),
            )
        except ConfigurationError as e:
            raise ParseError(str(e), line=line) from None
        known = catalog.setdefault(name, mt)
        if known != mt:
            raise ParseError(f"machine type {name} redefined with different attributes", line=line)
        scale_out = _number(row, "scale_out", line, int)
        if scale_out < 1:
            raise ParseError(f"scale_out must be >= 1 (got {scale_out})", line=line)
        runtime = _number(row, "runtime_s", line)
        if not runtime > 0:
            raise ParseError(f"runtime_s must be > 0 (got {runtime})", line=line)
        if has_cost and (row.get("cost") or "").strip():
            cost = _number(row, "cost", line)
        else:
            cost = runtime / 3600.0 * scale_out * mt.price_per_hour
        if not cost > 0:
            raise ParseError(f"cost must be > 0 (got {cost})", line=line)

        job_rows = rows.setdefault(job, {})
        if (name, scale_out) in job_rows:
            raise ParseError(f"duplicate measurement for {job} on {name}x{scale_out}", line=line)
        job_rows[(name, scale_out)] = ReplayEntry(runtime_s=runtime, cost=cost)
        meta.setdefault(
            job, ((row.get("framework") or "").strip(), (row.get("dataset_size") or "").strip())
        )

    if not rows:
        raise ParseError("replay table has no data rows", line=2)

    machine_types = list(catalog.values())
    union_pairs = sorted({key for job_rows in rows.values() for key in job_rows})
    union = space_from_pairs(machine_types, union_pairs)
    gaps = {
        job: [f"{n}x{s}" for n, s in union_pairs if (n, s) not in job_rows]
        for job, job_rows in sorted(rows.items())
    }
    gaps = {job: g for job, g in gaps.items() if g}
    if gaps and not allow_incomplete:
        summary = ", ".join(f"{job} ({len(g)} missing)" for job, g in gaps.items())
        raise CompletenessError(f"jobs do not cover the {len(union)}-config space: {summary}", gaps)

    table = ReplayTable()
    for job, job_rows in sorted(rows.items()):
        if job in gaps:
            space = space_from_pairs(machine_types, job_rows.keys())
            logger.warning(
                "Job %s covers %d of %d configs, searching its own space", job, len(space), len(union)
            )
        else:
            space = union
        entries = {space.index_of(key): entry for key, entry in job_rows.items()}
        framework, size_label = meta[job]
        table.jobs[job] = JobTable(job, space, entries, framework, size_label)
    logger.info("Loaded %d jobs over %d configs from %s", len(table), len(union), p.name)
    return table


def normalize_costs(table: ReplayTable, job: str) -> dict[int, float]:
    """Costs divided by the job's cheapest cost; the optimum maps to exactly 1.0."""
    jt = table[job]
    best = min(e.cost for e in jt.entries.values())
    return {cid: jt.entries[cid].cost / best for cid in sorted(jt.entries)}


def load_categories(path: Path | str) -> dict[str, JobCategory]:
    """Read the (job, category, job_gb) sidecar used for replay without profiling."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    reader = csv.DictReader(text.splitlines(), dialect=_sniff_dialect(text[:4096]))
    if reader.fieldnames is None:
        raise ParseError("category file is empty", line=1)
    reader.fieldnames = [h.strip() for h in reader.fieldnames]
    if "job" not in reader.fieldnames or "category" not in reader.fieldnames:
        raise ParseError("category file needs job and category columns", line=1)

    out: dict[str, JobCategory] = {}
    for row in reader:
        line = reader.line_num
        job = (row.get("job") or "").strip()
        if not job:
            continue
        try:
            category = MemoryCategory((row.get("category") or "").strip().lower())
        except ValueError:
            raise ParseError(f"unknown category {row.get('category')!r}", line=line) from None
        raw_gb = (row.get("job_gb") or "").strip()
        requirement = None
        if category is MemoryCategory.LINEAR:
            if not raw_gb:
                raise ParseError(f"linear job {job} needs job_gb", line=line)
            gb = _number(row, "job_gb", line)
            if not gb > 0:
                raise ParseError(f"job_gb must be > 0 (got {gb})", line=line)
            requirement = MemoryRequirement(job_gb=gb)
        elif raw_gb:
            logger.debug("Ignoring job_gb for %s job %s", category.value, job)
        if job in out:
            raise ParseError(f"duplicate category for job {job}", line=line)
        out[job] = JobCategory(MemoryModel.declared(category), requirement)
    return out


def write_replay_table(table: ReplayTable, path: Path | str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS + OPTIONAL_COLUMNS)
        for jt in table:
            for cid in jt.space.ids:
                cfg = jt.space[cid]
                entry = jt.entries[cid]
                mt = cfg.machine_type
                writer.writerow([
                    jt.name, mt.name, mt.cores, f"{mt.memory_gb:g}", f"{mt.price_per_hour:g}",
                    cfg.scale_out, f"{entry.runtime_s:.6f}", f"{entry.cost:.9f}",
                    jt.framework, jt.dataset_size_label,
                ])
    return p


def write_categories(categories: dict[str, JobCategory], path: Path | str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CATEGORY_COLUMNS)
        for job in sorted(categories):
            cat = categories[job]
            gb = f"{cat.requirement.job_gb:.6f}" if cat.requirement else ""
            writer.writerow([job, cat.model.category.value, gb])
    return p
