"""Exception hierarchy.  The CLI maps these onto process exit codes."""

from __future__ import annotations

from typing import Any


class GossipLangevinError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(GossipLangevinError, ValueError):
    exit_code = 2


class InvalidParameterError(ConfigError):
    pass


class InvalidTopologyError(ConfigError):
    pass


class ConnectivityError(InvalidTopologyError):
    """The graph has more than one connected component."""


class MalformedEdgeError(InvalidTopologyError):
    pass


class ConditionError(ConfigError):
    """A step-size or fusion-weight condition of the consensus analysis fails."""


class DegenerateCaseError(InvalidParameterError):
    pass


class NumericDomainError(GossipLangevinError, ValueError):
    pass


class DivergenceError(GossipLangevinError, FloatingPointError):
    """A chain produced a non-finite sample.

    ``trace`` holds whatever was recorded before the blow-up.
    """

    exit_code = 3

    def __init__(self, message: str, tick: int, trace: Any = None):
        super().__init__(message)
        self.tick = tick
        self.trace = trace


class MissingDataError(GossipLangevinError, FileNotFoundError):
    exit_code = 4


class DataFormatError(GossipLangevinError, ValueError):
    exit_code = 4

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(DataFormatError):
    pass


class SchemaError(DataFormatError):
    pass


class InsufficientDataError(ConfigError):
    pass


class PartitionError(ConfigError):
    pass


class GridRangeError(GossipLangevinError, ValueError):
    """Grid boundary carries too much posterior mass."""

    def __init__(self, message: str, suggested_ranges: tuple | None = None):
        super().__init__(message)
        self.suggested_ranges = suggested_ranges
