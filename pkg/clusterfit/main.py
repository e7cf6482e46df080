"""clusterfit command line: profile -> model -> partition -> search / replay."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml
from dotenv import load_dotenv

from clusterfit import __version__, config
from clusterfit.core.config_space import PartitionParams, build_priority_partition, load_catalog
from clusterfit.core.errors import ClusterFitError, ConfigurationError, ProfilingError
from clusterfit.core.memory_model import (
    MemoryCategory,
    extrapolate_requirement,
    fit_memory_model,
    load_samples,
)
from clusterfit.core.profiler import profile_job, read_report, write_report as write_profile
from clusterfit.core.search_engine import SearchParams, run_baseline_search, run_priority_search
from clusterfit.replay.harness import compare_methods, report_summary, write_report as write_comparison
from clusterfit.replay.synthetic import generate_benchmark
from clusterfit.replay.table import (
    ReplayOracle,
    load_categories,
    load_replay_table,
    write_categories,
    write_replay_table,
)
from clusterfit.tools.process_monitor import CommandTemplate

logger = logging.getLogger("clusterfit")

MANIFEST_NAME = "manifest.yaml"


@dataclass
class RunManifest:
    """Everything needed to rerun a command on the same inputs."""
    subcommand: str
    parameters: dict[str, Any]
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        path.write_text(yaml.safe_dump(asdict(self), sort_keys=True), encoding="utf-8")
        return path


def file_digest(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return value


def _arg_parameters(args: argparse.Namespace) -> dict[str, Any]:
    skip = {"func", "verbose"}
    return {k: _plain(v) for k, v in sorted(vars(args).items()) if k not in skip}


# ── Argument types ──

def _float_pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return lo, hi


def _env_pair(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, value


# ── Subcommands ──

def cmd_profile(args: argparse.Namespace) -> int:
    out = Path(args.out)
    cmd = CommandTemplate.parse(args.cmd, env=dict(args.env or []), working_dir=args.workdir)
    sample_dir = args.sample_dir or str(out / "samples")
    try:
        report = profile_job(
            cmd,
            args.dataset,
            window=args.window,
            seed=args.seed,
            start_fraction=args.start_fraction,
            sample_count=args.samples,
            max_attempts=args.max_attempts,
            poll_interval_s=args.poll,
            sample_dir=sample_dir,
            prefix=args.prefix,
        )
    except ProfilingError as e:
        if e.partial is not None:
            write_profile(e.partial, out / "profile.partial.yaml")
        if e.output:
            logger.error("Last output of the job:\n%s", e.output)
        raise
    path = write_profile(report, out / "profile.yaml")
    RunManifest(
        "profile",
        _arg_parameters(args),
        inputs={str(args.dataset): file_digest(args.dataset)},
        seed=args.seed,
    ).write(out)
    print(f"profile: {len(report.samples)} samples, calibrated fraction "
          f"{report.calibrated_fraction:.5g}, {report.wall_time_s:.1f}s -> {path}")
    return 0


def cmd_model(args: argparse.Namespace) -> int:
    out = Path(args.out)
    dataset_bytes = 0
    if args.report:
        profile = read_report(args.report)
        samples, dataset_bytes = profile.samples, profile.dataset_bytes
        source = args.report
    else:
        samples = load_samples(args.samples)
        source = args.samples
    model = fit_memory_model(samples, tuple(args.thresholds))
    doc: dict[str, Any] = {"model": model.to_dict(), "requirement": None}
    print(f"category: {model.category.value}")
    print(f"r2: {model.r2:.6f}")

    requirement = None
    if model.category is MemoryCategory.LINEAR:
        full_size = args.full_size or dataset_bytes
        if not full_size:
            raise ConfigurationError("linear model needs --full-size (report has no dataset size)")
        requirement = extrapolate_requirement(model, int(full_size))
        doc["requirement"] = {
            "job_gb": requirement.job_gb,
            "full_dataset_bytes": requirement.full_dataset_bytes,
        }
        print(f"job_gb: {requirement.job_gb:.3f}")

    inputs = {str(source): file_digest(source)}
    if args.catalog:
        space = load_catalog(args.catalog)
        partition = build_priority_partition(
            space, model, requirement, PartitionParams.from_config(flat_count=args.flat_count)
        )
        doc["partition"] = {
            "reason": partition.reason,
            "priority": [space[i].label for i in sorted(partition.priority)],
            "remainder": [space[i].label for i in sorted(partition.remainder)],
        }
        inputs[str(args.catalog)] = file_digest(args.catalog)
        print(f"priority: {len(partition.priority)} of {len(space)} configs ({partition.reason})")

    out.mkdir(parents=True, exist_ok=True)
    (out / "model.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    RunManifest("model", _arg_parameters(args), inputs=inputs).write(out)
    return 0


def _search_params(args: argparse.Namespace) -> SearchParams:
    return SearchParams.from_config(
        n_initial=args.n_initial,
        ei_stop_fraction=args.ei_stop,
        min_observations=args.min_observations,
        init_from_full=args.init_from_full,
    )


def cmd_replay_compare(args: argparse.Namespace) -> int:
    out = Path(args.out)
    table = load_replay_table(args.table, allow_incomplete=args.allow_incomplete)
    categories = load_categories(args.categories)
    params = _search_params(args)
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    report = compare_methods(
        table,
        args.jobs.split(",") if args.jobs else None,
        categories,
        params,
        seeds=seeds,
        partition_params=PartitionParams.from_config(flat_count=args.flat_count),
        workers=args.workers,
        exhaustive=not args.with_stopping,
        keep_traces=args.traces,
    )
    write_comparison(report, out, write_traces=args.traces)
    parameters = _arg_parameters(args)
    parameters["search"] = _plain(asdict(params))
    parameters["seed_list"] = seeds
    RunManifest(
        "replay compare",
        parameters,
        inputs={str(args.table): file_digest(args.table),
                str(args.categories): file_digest(args.categories)},
        seed=args.seed_start,
    ).write(out)
    summary = report_summary(report)
    print(yaml.safe_dump(summary, sort_keys=False).rstrip())
    return 0


def cmd_replay_search(args: argparse.Namespace) -> int:
    out = Path(args.out)
    table = load_replay_table(args.table, allow_incomplete=args.allow_incomplete)
    categories = load_categories(args.categories)
    if args.job not in categories:
        raise ConfigurationError(f"no memory category for job {args.job}")
    job = table[args.job]
    category = categories[args.job]
    params = _search_params(args).with_seed(args.seed)
    if not args.with_stopping:
        params = replace(params, stop_on_convergence=False)
    partition = build_priority_partition(
        job.space, category.model, category.requirement,
        PartitionParams.from_config(flat_count=args.flat_count),
    )
    baseline = run_baseline_search(job.space, ReplayOracle(job), params)
    priority = run_priority_search(job.space, partition, ReplayOracle(job), params)

    def labelled(trace) -> dict[str, Any]:
        doc = trace.to_dict()
        for row in doc["observations"]:
            row["label"] = job.space[row["config_id"]].label
        return doc

    doc = {
        "job": job.name,
        "seed": args.seed,
        "category": category.model.category.value,
        "priority": [job.space[i].label for i in sorted(partition.priority)],
        "traces": {"baseline": labelled(baseline), "priority": labelled(priority)},
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "search.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    parameters = _arg_parameters(args)
    parameters["search"] = _plain(asdict(params))
    RunManifest(
        "replay search",
        parameters,
        inputs={str(args.table): file_digest(args.table),
                str(args.categories): file_digest(args.categories)},
        seed=args.seed,
    ).write(out)
    for name, trace in (("baseline", baseline), ("priority", priority)):
        best = trace.best
        print(f"{name}: {len(trace)} iterations, best {job.space[best.config_id].label} "
              f"cost {best.cost:.6g} ({trace.stop_reason.value})")
    return 0


def cmd_replay_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    table, categories = generate_benchmark(
        n_linear=args.linear, n_flat=args.flat, n_unclear=args.unclear, seed=args.seed,
    )
    table_path = write_replay_table(table, out / "table.csv")
    cat_path = write_categories(categories, out / "categories.csv")
    RunManifest("replay synth", _arg_parameters(args), seed=args.seed).write(out)
    print(f"synthetic benchmark: {len(table)} jobs -> {table_path}, {cat_path}")
    return 0


# ── Parser ──

def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-initial", type=int, default=config.get("search.n_initial", 3),
                   help="random configurations before the model takes over")
    p.add_argument("--ei-stop", type=float, default=config.get("search.ei_stop_fraction", 0.1),
                   help="stop once max expected improvement < this share of the best cost")
    p.add_argument("--min-observations", type=int,
                   default=config.get("search.min_observations", 6),
                   help="observations before the stopping rule applies")
    p.add_argument("--flat-count", type=int, default=config.get("partition.flat_count"),
                   help="priority size for flat jobs (default: flat_fraction "
                        f"{config.get('partition.flat_fraction', 0.15)} of the space)")
    p.add_argument("--init-from-full", action="store_true",
                   default=config.get("search.init_from_full", False),
                   help="draw the initial configs from the whole space, not the priority set")
    p.add_argument("--with-stopping", action="store_true",
                   help="apply the stopping rule instead of exhaustive replay")
    p.add_argument("--allow-incomplete", action="store_true",
                   help="give jobs with missing configs their own smaller space")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="clusterfit",
        description="Memory-aware search for cost-efficient cluster configurations.",
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="profile job memory on dataset samples", formatter_class=fmt)
    p.add_argument("--cmd", required=True,
                   help="job command with one {input} placeholder for the sample path")
    p.add_argument("--data", "--dataset", dest="dataset", type=Path, required=True,
                   help="full input dataset")
    p.add_argument("--out", type=Path, default=Path("results/profile"))
    window = config.get("profiler.window", [30, 300])
    p.add_argument("--window", type=_float_pair, default=(float(window[0]), float(window[1])),
                   help="accepted calibration runtime MIN,MAX in seconds")
    p.add_argument("--start-fraction", type=float,
                   default=config.get("profiler.start_fraction", 0.01))
    p.add_argument("--samples", type=int, default=config.get("profiler.sample_count", 5),
                   help="number of sample sizes")
    p.add_argument("--max-attempts", type=int, default=config.get("profiler.max_attempts", 8))
    p.add_argument("--seed", type=int, default=config.get("profiler.seed", 0))
    p.add_argument("--poll", type=float, default=config.get("profiler.poll_interval_s", 0.2),
                   help="memory sampling interval in seconds")
    p.add_argument("--sample-dir", default=None, help="where samples go (default: OUT/samples)")
    p.add_argument("--prefix", action="store_true", help="take leading records instead of a random sample")
    p.add_argument("--env", type=_env_pair, action="append", metavar="KEY=VALUE",
                   help="extra environment for the job, repeatable")
    p.add_argument("--workdir", default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("model", help="fit and categorize a memory model", formatter_class=fmt)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--report", type=Path, help="profile.yaml written by 'profile'")
    src.add_argument("--samples", type=Path, help="plain input_bytes,job_memory_bytes table")
    p.add_argument("--full-size", type=int, default=None,
                   help="full dataset size in bytes (default: from the report)")
    p.add_argument("--thresholds", type=_float_pair,
                   default=(config.get("memory_model.r2_low", 0.1),
                            config.get("memory_model.r2_high", 0.99)),
                   help="R² bounds LOW,HIGH for flat and linear")
    p.add_argument("--catalog", type=Path, default=None,
                   help="catalog YAML; also writes the priority partition")
    p.add_argument("--flat-count", type=int, default=config.get("partition.flat_count"))
    p.add_argument("--out", type=Path, default=Path("results/model"))
    p.set_defaults(func=cmd_model)

    replay = sub.add_parser("replay", help="replay searches on measured tables", formatter_class=fmt)
    rsub = replay.add_subparsers(dest="replay_command", required=True)

    p = rsub.add_parser("compare", help="baseline vs priority over many seeds", formatter_class=fmt)
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--categories", type=Path, required=True)
    p.add_argument("--seeds", type=int, default=config.get("replay.seeds", 200))
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--jobs", default=None, help="comma-separated job subset")
    p.add_argument("--workers", type=int, default=config.get("replay.workers", 1))
    p.add_argument("--traces", action="store_true", help="also write every trace")
    p.add_argument("--out", type=Path, default=Path("results/replay"))
    _add_search_flags(p)
    p.set_defaults(func=cmd_replay_compare)

    p = rsub.add_parser("search", help="both searches for one job and seed", formatter_class=fmt)
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--categories", type=Path, required=True)
    p.add_argument("--job", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results/search"))
    _add_search_flags(p)
    p.set_defaults(func=cmd_replay_search)

    p = rsub.add_parser("synth", help="generate the synthetic bottleneck benchmark",
                        formatter_class=fmt)
    p.add_argument("--linear", type=int, default=4)
    p.add_argument("--flat", type=int, default=4)
    p.add_argument("--unclear", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results/synth"))
    p.set_defaults(func=cmd_replay_synth)
    return parser


def _check_paths(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    for name in ("dataset", "report", "samples", "catalog", "table", "categories"):
        value = getattr(args, name, None)
        if isinstance(value, Path) and not value.is_file():
            flag = "data" if name == "dataset" else name
            parser.error(f"--{flag}: {value} does not exist")
    window = getattr(args, "window", None)
    if window is not None and not 0 <= window[0] < window[1]:
        parser.error(f"--window must satisfy 0 <= MIN < MAX (got {window[0]:g},{window[1]:g})")
    poll = getattr(args, "poll", None)
    if poll is not None and not poll > 0:
        parser.error(f"--poll must be > 0 (got {poll:g})")
    seeds = getattr(args, "seeds", None)
    if isinstance(seeds, int) and seeds < 1:
        parser.error("--seeds must be >= 1")


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    level = "DEBUG" if args.verbose else str(config.get("logging.level", "INFO")).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=config.get("logging.format", "%(asctime)s [%(name)s] %(levelname)s: %(message)s"),
    )
    _check_paths(parser, args)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except ClusterFitError as e:
        logger.error("%s failed: %s", args.command, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
