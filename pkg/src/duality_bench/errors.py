"""Semantic exception hierarchy for the package.

Public functions raise these instead of bare ValueError/RuntimeError so the
CLI can map failure classes to exit codes (config error -> 2, model/runtime
error -> 3).
"""


class DualityBenchError(Exception):
    """Base error for this package."""


class ConfigError(DualityBenchError, ValueError):
    """A run configuration violates its contract; message names the field."""


class ModelError(DualityBenchError):
    """A model object is invalid or an evaluation left its domain."""


class ZeroMassError(ModelError):
    """Conditioning on an event of zero probability mass."""


class SupportError(ModelError):
    """Absolute-continuity violation: candidate mass outside the base support."""
