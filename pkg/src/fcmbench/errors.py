"""Exception taxonomy shared by all fcmbench modules.

The CLI maps these onto exit codes: ValidationError/ConfigError -> 1,
FormatError/CorruptionError -> 2.
"""


class FcmBenchError(Exception):
    """Base class for all fcmbench errors."""


class ValidationError(FcmBenchError):
    """An input violates a documented precondition or invariant."""


class ConfigError(FcmBenchError):
    """An unknown family, profile id, or inconsistent configuration."""


class FormatError(FcmBenchError):
    """A file does not match its declared container format."""


class CorruptionError(FcmBenchError):
    """A container parses structurally but its payload is damaged."""
