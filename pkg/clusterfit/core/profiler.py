"""Single-machine memory profiling of a job on growing dataset samples.

Calibration searches a sample fraction whose runtime lands inside the
profiling window (long enough to get past framework start-up, short enough
to keep profiling cheap): start at 1% of the dataset, halve after a run that
had to be canceled for exceeding the window, double after a run that ended
too early. The accepted fraction f becomes the largest of ``sample_count``
equally spaced samples f/n, 2f/n, ..., f; the calibration run itself is
reused for f, so only n - 1 further runs happen.
"""

from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from clusterfit import config
from clusterfit.core.errors import (
    CalibrationError,
    ClusterFitError,
    ConfigurationError,
    ProfilingError,
    RunTimeout,
)
from clusterfit.core.memory_model import MemorySample
from clusterfit.tools.process_monitor import CommandTemplate, MonitoredRun, run_monitored
from clusterfit.tools.sampler import SampleFile, generate_sample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProfilerSettings:
    window: tuple[float, float] = (30.0, 300.0)
    start_fraction: float = 0.01
    max_attempts: int = 8
    poll_interval_s: float = 0.2
    sample_count: int = 5
    seed: int = 0
    sample_dir: str | None = None
    prefix: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.window
        if not 0 <= lo < hi:
            raise ConfigurationError(f"window must satisfy 0 <= min < max (got {self.window})")
        if not 0 < self.start_fraction <= 1:
            raise ConfigurationError("start_fraction must be in (0, 1]")
        if self.max_attempts < 1 or self.sample_count < 2:
            raise ConfigurationError("max_attempts must be >= 1 and sample_count >= 2")
        if not self.poll_interval_s > 0:
            raise ConfigurationError("poll_interval_s must be > 0")

    @classmethod
    def from_config(cls, **overrides: Any) -> "ProfilerSettings":
        window = config.get("profiler.window", [30, 300])
        values = {
            "window": (float(window[0]), float(window[1])),
            "start_fraction": float(config.get("profiler.start_fraction", 0.01)),
            "max_attempts": int(config.get("profiler.max_attempts", 8)),
            "poll_interval_s": float(config.get("profiler.poll_interval_s", 0.2)),
            "sample_count": int(config.get("profiler.sample_count", 5)),
            "seed": int(config.get("profiler.seed", 0)),
            "sample_dir": config.get("profiler.sample_dir"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class CalibrationResult:
    fraction: float
    runtime_s: float
    attempts: int
    sample: SampleFile
    run: MonitoredRun


@dataclass
class ProfilingReport:
    samples: list[MemorySample]
    sample_fractions: list[float]
    wall_time_s: float
    calibrated_fraction: float = 0.0
    dataset_bytes: int = 0
    runtimes_s: list[float] = field(default_factory=list)
    command: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "dataset_bytes": self.dataset_bytes,
            "calibrated_fraction": self.calibrated_fraction,
            "wall_time_s": round(self.wall_time_s, 3),
            "samples": [
                {
                    "fraction": frac,
                    "input_bytes": s.input_bytes,
                    "job_memory_bytes": s.job_memory_bytes,
                    "runtime_s": round(rt, 3) if rt is not None else None,
                }
                for s, frac, rt in zip(
                    self.samples,
                    self.sample_fractions,
                    self.runtimes_s + [None] * (len(self.samples) - len(self.runtimes_s)),
                )
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProfilingReport":
        rows = data.get("samples") or []
        return cls(
            samples=[MemorySample(int(r["input_bytes"]), int(r["job_memory_bytes"])) for r in rows],
            sample_fractions=[float(r["fraction"]) for r in rows],
            wall_time_s=float(data.get("wall_time_s", 0.0)),
            calibrated_fraction=float(data.get("calibrated_fraction", 0.0)),
            dataset_bytes=int(data.get("dataset_bytes", 0)),
            runtimes_s=[float(r["runtime_s"]) for r in rows if r.get("runtime_s") is not None],
            command=data.get("command", ""),
        )


def write_report(report: ProfilingReport, path: Path | str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(yaml.safe_dump(report.to_dict(), sort_keys=False), encoding="utf-8")
    return p


def read_report(path: Path | str) -> ProfilingReport:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return ProfilingReport.from_dict(data)


class Profiler:
    """Profiles one command; runs never overlap on the same instance."""

    def __init__(self, cmd: CommandTemplate, settings: ProfilerSettings | None = None) -> None:
        self.cmd = cmd
        self.settings = settings or ProfilerSettings.from_config()
        self._lock = asyncio.Lock()

    async def _measure(
        self, dataset: Path, fraction: float, timeout_s: float | None
    ) -> tuple[SampleFile, MonitoredRun]:
        s = self.settings
        sample = generate_sample(
            dataset, fraction, seed=s.seed, out_dir=s.sample_dir, prefix=s.prefix
        )
        try:
            run = await run_monitored(self.cmd, sample.path, s.poll_interval_s, timeout_s)
        except RunTimeout:
            _discard(sample)
            raise
        return sample, run

    async def _calibrate(self, dataset: Path) -> CalibrationResult:
        lo, hi = self.settings.window
        fraction = self.settings.start_fraction
        last_runtime: float | None = None
        for attempt in range(1, self.settings.max_attempts + 1):
            try:
                sample, run = await self._measure(dataset, fraction, timeout_s=hi)
            except RunTimeout as e:
                last_runtime = e.elapsed_s
                logger.info(
                    "Calibration %d: fraction %.5g canceled after %.1fs, halving",
                    attempt, fraction, e.elapsed_s,
                )
                fraction /= 2
                continue
            last_runtime = run.elapsed_s
            if run.elapsed_s < lo:
                if fraction >= 1.0:
                    logger.warning(
                        "Full dataset runs in %.1fs, below the %.0fs window; using it as is",
                        run.elapsed_s, lo,
                    )
                    return CalibrationResult(fraction, run.elapsed_s, attempt, sample, run)
                logger.info(
                    "Calibration %d: fraction %.5g ran %.1fs, doubling", attempt, fraction, run.elapsed_s
                )
                _discard(sample)
                fraction = min(1.0, fraction * 2)
                continue
            logger.info(
                "Calibration %d: fraction %.5g ran %.1fs, accepted", attempt, fraction, run.elapsed_s
            )
            return CalibrationResult(fraction, run.elapsed_s, attempt, sample, run)
        raise CalibrationError(
            f"no runtime inside [{lo:g}, {hi:g}]s after {self.settings.max_attempts} attempts",
            last_runtime_s=last_runtime,
        )

    async def calibrate(self, dataset_path: Path | str) -> CalibrationResult:
        async with self._lock:
            return await self._calibrate(Path(dataset_path))

    async def profile(self, dataset_path: Path | str) -> ProfilingReport:
        dataset = Path(dataset_path)
        async with self._lock:
            started = time.monotonic()
            cal = await self._calibrate(dataset)
            n = self.settings.sample_count
            fractions = [cal.fraction * k / n for k in range(1, n)] + [cal.fraction]
            report = ProfilingReport(
                samples=[],
                sample_fractions=[],
                wall_time_s=0.0,
                calibrated_fraction=cal.fraction,
                dataset_bytes=dataset.stat().st_size,
                command=self.cmd.describe(),
            )
            for fraction in fractions[:-1]:
                try:
                    sample, run = await self._measure(dataset, fraction, timeout_s=None)
                except ClusterFitError as e:
                    report.wall_time_s = time.monotonic() - started
                    raise ProfilingError(
                        f"profiling run at fraction {fraction:.5g} failed: {e}",
                        trace=getattr(e, "trace", None),
                        returncode=getattr(e, "returncode", None),
                        output=getattr(e, "output", ""),
                        partial=report,
                    ) from e
                self._record(report, fraction, sample, run)
            self._record(report, cal.fraction, cal.sample, cal.run)
            report.wall_time_s = time.monotonic() - started
        logger.info(
            "Profiled %s: %d samples in %.1fs", dataset.name, len(report.samples), report.wall_time_s
        )
        return report

    @staticmethod
    def _record(report: ProfilingReport, fraction: float, sample: SampleFile, run: MonitoredRun) -> None:
        report.samples.append(MemorySample(sample.size_bytes, run.trace.job_memory_bytes))
        report.sample_fractions.append(fraction)
        report.runtimes_s.append(run.elapsed_s)
        logger.info(
            "Sample %.5g: %d input bytes, %d job memory bytes, %.1fs",
            fraction, sample.size_bytes, run.trace.job_memory_bytes, run.elapsed_s,
        )


def _discard(sample: SampleFile) -> None:
    """Remove a sample the calibration rejected."""
    sample.path.unlink(missing_ok=True)
    logger.debug("Removed rejected sample %s", sample.path.name)


def calibrate_sample_fraction(
    cmd: CommandTemplate,
    dataset_path: Path | str,
    window: tuple[float, float] = (30.0, 300.0),
    **settings: Any,
) -> float:
    """Blocking calibration; returns the accepted sample fraction."""
    profiler = Profiler(cmd, ProfilerSettings.from_config(window=tuple(window), **settings))
    return asyncio.run(profiler.calibrate(dataset_path)).fraction


def profile_job(
    cmd: CommandTemplate,
    dataset_path: Path | str,
    window: tuple[float, float] = (30.0, 300.0),
    seed: int = 0,
    **settings: Any,
) -> ProfilingReport:
    """Blocking end-to-end profiling run."""
    profiler = Profiler(cmd, ProfilerSettings.from_config(window=tuple(window), seed=seed, **settings))
    return asyncio.run(profiler.profile(dataset_path))
