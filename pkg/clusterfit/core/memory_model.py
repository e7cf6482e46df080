"""Input-size vs. job-memory model: fit, categorize, extrapolate.

A job is profiled on a handful of dataset samples. An ordinary least-squares
line through (input bytes, peak job memory) is scored with R² on the very
points it was trained on, and the score sorts the job into one of three
categories:

- linear:  R² >= r2_high, the line is trusted for extrapolation
- flat:    R² <  r2_low, memory does not follow the input size
- unclear: anything in between, no usable requirement

Only linear models can be extrapolated to a full-size requirement.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from scipy.stats import linregress

from clusterfit import config
from clusterfit.core.errors import (
    CategoryError,
    ConfigurationError,
    InsufficientDataError,
    ParseError,
)

logger = logging.getLogger(__name__)

GIB = 1024 ** 3
DEFAULT_THRESHOLDS = (0.1, 0.99)


class MemoryCategory(str, Enum):
    LINEAR = "linear"
    FLAT = "flat"
    UNCLEAR = "unclear"


@dataclass(frozen=True)
class MemorySample:
    """One profiling run: sample size and baseline-subtracted peak memory."""
    input_bytes: int
    job_memory_bytes: int

    def __post_init__(self) -> None:
        if self.input_bytes <= 0:
            raise ConfigurationError(f"input_bytes must be > 0 (got {self.input_bytes})")
        if self.job_memory_bytes < 0:
            raise ConfigurationError(
                f"job_memory_bytes must be >= 0 (got {self.job_memory_bytes})"
            )


@dataclass(frozen=True)
class MemoryModel:
    """Fitted (or declared) memory behavior of a job.

    ``r2`` is None for models declared from a category sidecar rather than
    fitted from samples.
    """
    category: MemoryCategory
    r2: float | None
    slope: float | None = None          # bytes of memory per input byte
    intercept: float | None = None      # bytes
    mean_bytes: float | None = None
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS
    n_samples: int = 0

    @classmethod
    def declared(cls, category: MemoryCategory | str) -> "MemoryModel":
        return cls(category=MemoryCategory(category), r2=None)

    @property
    def is_fitted(self) -> bool:
        return self.r2 is not None

    def predict_bytes(self, input_bytes: float) -> float:
        if self.category is not MemoryCategory.LINEAR or self.slope is None:
            raise CategoryError(f"cannot predict memory for a {self.category.value} model")
        return self.slope * input_bytes + self.intercept

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.value,
            "r2": self.r2,
            "slope": self.slope,
            "intercept": self.intercept,
            "mean_bytes": self.mean_bytes,
            "thresholds": list(self.thresholds),
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MemoryModel":
        return cls(
            category=MemoryCategory(data["category"]),
            r2=data.get("r2"),
            slope=data.get("slope"),
            intercept=data.get("intercept"),
            mean_bytes=data.get("mean_bytes"),
            thresholds=tuple(data.get("thresholds", DEFAULT_THRESHOLDS)),
            n_samples=data.get("n_samples", 0),
        )


@dataclass(frozen=True)
class MemoryRequirement:
    """Extrapolated memory of the job itself at full dataset size."""
    job_gb: float
    full_dataset_bytes: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.job_gb > 0:
            raise ConfigurationError(f"job_gb must be > 0 (got {self.job_gb})")


def default_thresholds() -> tuple[float, float]:
    return (
        float(config.get("memory_model.r2_low", DEFAULT_THRESHOLDS[0])),
        float(config.get("memory_model.r2_high", DEFAULT_THRESHOLDS[1])),
    )


def _check_thresholds(thresholds: tuple[float, float]) -> tuple[float, float]:
    low, high = thresholds
    if not 0 < low < high < 1:
        raise ConfigurationError(
            f"thresholds must satisfy 0 < r2_low < r2_high < 1 (got {low}, {high})"
        )
    return float(low), float(high)


def categorize(r2: float, thresholds: tuple[float, float]) -> MemoryCategory:
    low, high = thresholds
    if r2 >= high:
        return MemoryCategory.LINEAR
    if r2 < low:
        return MemoryCategory.FLAT
    return MemoryCategory.UNCLEAR


def fit_memory_model(
    samples: Iterable[MemorySample],
    thresholds: tuple[float, float] | None = None,
) -> MemoryModel:
    """Least-squares fit of job memory over input size, categorized by R²."""
    samples = list(samples)
    low, high = _check_thresholds(thresholds or default_thresholds())
    if len(samples) < 3:
        raise InsufficientDataError(f"need at least 3 samples, got {len(samples)}")

    x = np.array([s.input_bytes for s in samples], dtype=float)
    y = np.array([s.job_memory_bytes for s in samples], dtype=float)
    if np.unique(x).size < 2:
        raise InsufficientDataError("all samples have the same input size")

    if np.ptp(y) == 0:
        # R² is undefined for constant targets; constant memory is the flat case
        return MemoryModel(
            category=MemoryCategory.FLAT,
            r2=0.0,
            slope=0.0,
            intercept=float(y[0]),
            mean_bytes=float(y[0]),
            thresholds=(low, high),
            n_samples=len(samples),
        )

    fit = linregress(x, y)
    residuals = y - (fit.slope * x + fit.intercept)
    ss_res = float(np.sum(residuals ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = min(1.0, 1.0 - ss_res / ss_tot)
    category = categorize(r2, (low, high))
    logger.info(
        "Memory model: %s (R²=%.4f, slope=%.4g, intercept=%.4g bytes, n=%d)",
        category.value, r2, fit.slope, fit.intercept, len(samples),
    )
    return MemoryModel(
        category=category,
        r2=r2,
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        mean_bytes=float(y.mean()),
        thresholds=(low, high),
        n_samples=len(samples),
    )


def extrapolate_requirement(
    model: MemoryModel,
    full_dataset_bytes: int,
    min_gb: float | None = None,
) -> MemoryRequirement:
    """Job memory at full dataset size; linear models only."""
    if model.category is not MemoryCategory.LINEAR:
        raise CategoryError(
            f"only linear models can be extrapolated (got {model.category.value})"
        )
    if model.slope is None or model.intercept is None:
        raise CategoryError("declared linear model has no fitted line to extrapolate")
    if full_dataset_bytes <= 0:
        raise ConfigurationError(f"full_dataset_bytes must be > 0 (got {full_dataset_bytes})")

    job_gb = model.predict_bytes(full_dataset_bytes) / GIB
    if job_gb <= 0:
        floor = min_gb if min_gb is not None else float(
            config.get("memory_model.min_requirement_gb", 0.001)
        )
        logger.warning(
            "Extrapolated requirement %.4f GB is not positive (intercept %.4g bytes); "
            "clamping to %g GB", job_gb, model.intercept, floor,
        )
        job_gb = floor
    return MemoryRequirement(job_gb=job_gb, full_dataset_bytes=full_dataset_bytes)


_SPLIT = re.compile(r"[,\s;]+")


def load_samples(path: Path | str) -> list[MemorySample]:
    """Read a plain table of ``input_bytes job_memory_bytes`` per line.

    Separators may be commas, semicolons or whitespace. Blank lines, ``#``
    comments and a non-numeric header line are skipped.
    """
    samples: list[MemorySample] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p for p in _SPLIT.split(line) if p]
            if len(parts) < 2:
                raise ParseError(f"expected 2 columns, got {len(parts)}", line=lineno)
            try:
                input_bytes, mem_bytes = int(float(parts[0])), int(float(parts[1]))
            except ValueError:
                if not samples:
                    continue  # header
                raise ParseError(f"non-numeric value in {line!r}", line=lineno) from None
            try:
                samples.append(MemorySample(input_bytes, mem_bytes))
            except ConfigurationError as e:
                raise ParseError(str(e), line=lineno) from None
    return samples
