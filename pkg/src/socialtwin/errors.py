"""Exception hierarchy shared across the toolkit.

The three leaf classes map onto CLI exit codes: ConfigError -> 1,
DataError -> 2, EngineError -> 3.
"""

from __future__ import annotations


class TwinError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TwinError):
    """Invalid run configuration, profile, or command usage."""


class DataError(TwinError):
    """Malformed, missing, or inconsistent input data."""


class EngineError(TwinError):
    """Cognitive engine failure: transport, parse after retries, replay miss."""


class ParseError(EngineError):
    """Engine response could not be parsed into a valid behavior vector."""
