"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/config problems exit 1,
runtime/numeric problems exit 2.
"""


class CrackSegError(Exception):
    """Base class for package errors."""


class ShapeError(CrackSegError):
    """Operand shapes do not conform. Message names both shapes."""


class ContractError(CrackSegError):
    """A documented precondition was violated by the caller."""


class ConfigError(CrackSegError):
    """Invalid configuration, file format, or CLI arguments."""


class CheckpointError(ConfigError):
    """Checkpoint file is malformed, truncated, or mismatched."""


class NumericError(CrackSegError):
    """Non-finite values or numeric divergence at runtime."""


class BottleneckWarning(UserWarning):
    """Reduce stage is not actually a bottleneck (mid channels >= input)."""
