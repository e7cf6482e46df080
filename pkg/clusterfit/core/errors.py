"""Exception hierarchy shared by every clusterfit stage."""

from __future__ import annotations

from typing import Any


class ClusterFitError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class ConfigurationError(ClusterFitError):
    """Invalid catalog, parameters or pipeline wiring."""


class ConfigLookupError(ClusterFitError, LookupError):
    """A cluster configuration is not part of the space."""


class InsufficientDataError(ClusterFitError):
    """Too few memory samples to fit a model."""


class CategoryError(ClusterFitError):
    """Operation needs a different memory category."""


class SamplingError(ClusterFitError):
    """Dataset sample could not be produced."""

    def __init__(self, message: str, achieved_bytes: int = 0) -> None:
        super().__init__(message)
        self.achieved_bytes = achieved_bytes


class ProfilingError(ClusterFitError):
    """Profiled command failed; keeps whatever was measured."""

    def __init__(
        self,
        message: str,
        trace: Any = None,
        returncode: int | None = None,
        output: str = "",
        partial: Any = None,
    ) -> None:
        super().__init__(message)
        self.trace = trace
        self.returncode = returncode
        self.output = output
        self.partial = partial


class RunTimeout(ClusterFitError):
    """Profiled command exceeded its time budget and was canceled."""

    def __init__(self, message: str, elapsed_s: float, trace: Any = None) -> None:
        super().__init__(message)
        self.elapsed_s = elapsed_s
        self.trace = trace


class CalibrationError(ClusterFitError):
    """Sample fraction never produced a runtime inside the window."""

    def __init__(self, message: str, last_runtime_s: float | None = None) -> None:
        super().__init__(message)
        self.last_runtime_s = last_runtime_s


class GpInputError(ClusterFitError, ValueError):
    """Shape or dimension mismatch in Gaussian-process inputs."""


class NumericalError(ClusterFitError):
    """Kernel matrix could not be factorized even with maximum jitter."""


class SearchError(ClusterFitError):
    """Cost oracle failed mid-search; keeps the partial trace."""

    def __init__(self, message: str, trace: Any = None) -> None:
        super().__init__(message)
        self.trace = trace


class ParseError(ClusterFitError):
    """Malformed input file row."""

    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class CompletenessError(ClusterFitError):
    """Replay job does not cover its configuration space."""

    def __init__(self, message: str, gaps: dict[str, list[str]] | None = None) -> None:
        super().__init__(message)
        self.gaps = gaps or {}
