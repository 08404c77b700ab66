"""Agent-based policy simulation toolkit.

Synthetic personas are queried through a pluggable cognitive engine to
produce per-agent behavioral probability vectors; aggregates are calibrated
against observed population metrics, scored against statistical baselines
under strict temporal splits, and exercised through counterfactual policy
sweeps and ablations.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, EngineError, ParseError, TwinError

__all__ = [
    "ConfigError",
    "DataError",
    "EngineError",
    "ParseError",
    "TwinError",
    "__version__",
]
