"""Launch a job command and sample the resident memory of its process tree."""

from __future__ import annotations

import asyncio
import logging
import os
import shlex
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import psutil

from clusterfit.core.errors import ConfigurationError, ProfilingError, RunTimeout

logger = logging.getLogger(__name__)

PLACEHOLDER = "{input}"
_BASELINE_SAMPLES = 3
_OUTPUT_LINES = 200


@dataclass(frozen=True)
class CommandTemplate:
    """Job command with exactly one ``{input}`` placeholder.

    ``env`` is layered over the current environment, which is how JVM or
    garbage-collector flags reach the job untouched.
    """
    argv_template: tuple[str, ...]
    env: Mapping[str, str] = field(default_factory=dict)
    working_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.argv_template:
            raise ConfigurationError("command template is empty")
        count = sum(arg.count(PLACEHOLDER) for arg in self.argv_template)
        if count != 1:
            raise ConfigurationError(
                f"command template needs exactly one {PLACEHOLDER} placeholder (found {count})"
            )

    @classmethod
    def parse(
        cls, command: str, env: Mapping[str, str] | None = None, working_dir: str | None = None
    ) -> "CommandTemplate":
        try:
            argv = shlex.split(command)
        except ValueError as e:
            raise ConfigurationError(f"invalid command syntax: {e}") from None
        return cls(tuple(argv), dict(env or {}), working_dir)

    def render(self, input_path: Path | str) -> list[str]:
        return [arg.replace(PLACEHOLDER, str(input_path)) for arg in self.argv_template]

    def describe(self) -> str:
        return shlex.join(self.argv_template)


@dataclass(frozen=True)
class TraceSeries:
    """Resident memory of a process tree over time."""
    timestamps: tuple[float, ...]
    rss_bytes: tuple[int, ...]
    baseline_bytes: int

    def __post_init__(self) -> None:
        if len(self.timestamps) != len(self.rss_bytes):
            raise ValueError("timestamps and rss_bytes differ in length")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")
        if self.baseline_bytes < 0 or any(r < 0 for r in self.rss_bytes):
            raise ValueError("memory readings must be non-negative")

    @property
    def peak_bytes(self) -> int:
        return max(self.rss_bytes, default=0)

    @property
    def job_memory_bytes(self) -> int:
        return max(0, self.peak_bytes - self.baseline_bytes)

    @property
    def duration_s(self) -> float:
        return self.timestamps[-1] if self.timestamps else 0.0

    @classmethod
    def from_samples(cls, timestamps: list[float], rss: list[int]) -> "TraceSeries":
        baseline = min(rss[:_BASELINE_SAMPLES]) if rss else 0
        return cls(tuple(timestamps), tuple(rss), baseline)


@dataclass
class MonitoredRun:
    trace: TraceSeries
    returncode: int
    elapsed_s: float
    output: str = ""


def tree_rss(proc: psutil.Process | None) -> int:
    """Total RSS of proc and all of its children."""
    if proc is None:
        return 0
    total = 0
    try:
        members = [proc] + proc.children(recursive=True)
    except psutil.Error:
        return 0
    for p in members:
        try:
            total += p.memory_info().rss
        except psutil.Error:
            pass
    return total


def _kill_tree(proc: psutil.Process | None) -> None:
    if proc is None:
        return
    try:
        members = proc.children(recursive=True) + [proc]
    except psutil.Error:
        return
    for p in members:
        try:
            p.terminate()
        except psutil.Error:
            pass
    _, alive = psutil.wait_procs(members, timeout=3)
    for p in alive:
        try:
            p.kill()
        except psutil.Error:
            pass


async def _read_output(stream: asyncio.StreamReader | None, buffer: deque[str]) -> None:
    if stream is None:
        return
    try:
        while True:
            line = await stream.readline()
            if not line:
                break
            buffer.append(line.decode(errors="replace").rstrip())
    except Exception:
        pass


async def run_monitored(
    cmd: CommandTemplate,
    input_path: Path | str,
    poll_interval_s: float = 0.2,
    timeout_s: float | None = None,
) -> MonitoredRun:
    """Run ``cmd`` on ``input_path`` and sample tree RSS until it exits.

    Raises RunTimeout (process tree killed) past ``timeout_s`` and
    ProfilingError on a nonzero exit; both carry the trace so far.
    """
    argv = cmd.render(input_path)
    env = {**os.environ, **dict(cmd.env)}
    start = time.monotonic()
    try:
        proc = await asyncio.create_subprocess_exec(
            *argv,
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.STDOUT,
            cwd=cmd.working_dir,
            env=env,
        )
    except OSError as e:
        raise ProfilingError(f"cannot launch {argv[0]!r}: {e}") from e

    try:
        ps_proc: psutil.Process | None = psutil.Process(proc.pid)
    except psutil.Error:
        ps_proc = None
    output: deque[str] = deque(maxlen=_OUTPUT_LINES)
    reader = asyncio.create_task(_read_output(proc.stdout, output))
    waiter = asyncio.ensure_future(proc.wait())
    timestamps: list[float] = []
    rss: list[int] = []

    try:
        while True:
            now = time.monotonic() - start
            if timestamps and now <= timestamps[-1]:
                now = timestamps[-1] + 1e-9
            timestamps.append(now)
            rss.append(tree_rss(ps_proc))
            if timeout_s is not None and now > timeout_s:
                _kill_tree(ps_proc)
                await waiter
                raise RunTimeout(
                    f"run exceeded {timeout_s:g}s and was canceled",
                    elapsed_s=now,
                    trace=TraceSeries.from_samples(timestamps, rss),
                )
            done, _ = await asyncio.wait({waiter}, timeout=poll_interval_s)
            if done:
                break
    except asyncio.CancelledError:
        _kill_tree(ps_proc)
        raise
    finally:
        await asyncio.wait({reader}, timeout=1.0)
        if not reader.done():
            reader.cancel()

    elapsed = time.monotonic() - start
    trace = TraceSeries.from_samples(timestamps, rss)
    returncode = waiter.result()
    text = "\n".join(output)
    if returncode != 0:
        raise ProfilingError(
            f"command exited with status {returncode}",
            trace=trace, returncode=returncode, output=text,
        )
    logger.debug(
        "Run of %s finished in %.2fs, %d samples, peak %d bytes over baseline %d",
        argv[0], elapsed, len(rss), trace.peak_bytes, trace.baseline_bytes,
    )
    return MonitoredRun(trace=trace, returncode=returncode, elapsed_s=elapsed, output=text)


def monitor_run(
    cmd: CommandTemplate, input_path: Path | str, poll_interval_s: float = 0.2
) -> TraceSeries:
    """Blocking wrapper around run_monitored returning the trace."""
    return asyncio.run(run_monitored(cmd, input_path, poll_interval_s)).trace
