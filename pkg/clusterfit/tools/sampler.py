"""Record-level dataset sampling for profiling runs."""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clusterfit import config
from clusterfit.core.errors import SamplingError

logger = logging.getLogger(__name__)

_BLOCK = 1 << 16


@dataclass(frozen=True)
class SampleFile:
    path: Path
    size_bytes: int
    records: int
    fraction: float


def _sample_path(dataset: Path, fraction: float, seed: int, prefix: bool, out_dir: Path) -> Path:
    mode = "prefix" if prefix else f"s{seed}"
    return out_dir / f"{dataset.stem}.f{fraction:.6f}.{mode}{dataset.suffix}"


def generate_sample(
    dataset_path: Path | str,
    fraction: float,
    seed: int = 0,
    out_dir: Path | str | None = None,
    prefix: bool = False,
    delimiter: bytes = b"\n",
) -> SampleFile:
    """Write a sample of a record-delimited dataset.

    Each record is kept independently with probability ``fraction``. One
    uniform variate is drawn per record from a stream seeded with ``seed``,
    so for a fixed seed the sample at a smaller fraction is a subset of the
    sample at a larger one. ``prefix=True`` keeps the first
    round(fraction x records) records instead.
    """
    dataset = Path(dataset_path)
    if not 0 < fraction <= 1:
        raise SamplingError(f"fraction must be in (0, 1] (got {fraction})")
    if not dataset.is_file():
        raise SamplingError(f"dataset {dataset} is not a readable file")
    target_dir = Path(out_dir or config.get("profiler.sample_dir") or config.data_dir() / "samples")
    target_dir.mkdir(parents=True, exist_ok=True)
    out = _sample_path(dataset, fraction, seed, prefix, target_dir)

    try:
        if fraction == 1.0:
            shutil.copyfile(dataset, out)
            records = _count_records(dataset, delimiter)
        elif prefix:
            records = _write_prefix(dataset, out, fraction, delimiter)
        else:
            records = _write_bernoulli(dataset, out, fraction, seed, delimiter)
    except OSError as e:
        raise SamplingError(f"cannot sample {dataset}: {e}") from e

    size = out.stat().st_size
    if records == 0 or size == 0:
        out.unlink(missing_ok=True)
        raise SamplingError(
            f"sample of {dataset} at fraction {fraction:g} is empty", achieved_bytes=size
        )
    logger.debug("Sampled %s at %.4g: %d records, %d bytes", dataset.name, fraction, records, size)
    return SampleFile(path=out, size_bytes=size, records=records, fraction=fraction)


def _records(path: Path, delimiter: bytes):
    if delimiter == b"\n":
        with open(path, "rb") as f:
            yield from f
        return
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(delimiter)
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if last and not part:
            break
        yield part if last else part + delimiter


def _count_records(path: Path, delimiter: bytes) -> int:
    return sum(1 for _ in _records(path, delimiter))


def _write_bernoulli(src: Path, dst: Path, fraction: float, seed: int, delimiter: bytes) -> int:
    rng = np.random.default_rng(seed)
    draws = rng.random(_BLOCK)
    pos = kept = 0
    with open(dst, "wb") as out:
        for record in _records(src, delimiter):
            if pos == _BLOCK:
                draws, pos = rng.random(_BLOCK), 0
            if draws[pos] < fraction:
                out.write(record)
                kept += 1
            pos += 1
    return kept


def _write_prefix(src: Path, dst: Path, fraction: float, delimiter: bytes) -> int:
    total = _count_records(src, delimiter)
    keep = min(total, max(0, math.floor(fraction * total + 0.5)))
    with open(dst, "wb") as out:
        for i, record in enumerate(_records(src, delimiter)):
            if i >= keep:
                break
            out.write(record)
    return keep
