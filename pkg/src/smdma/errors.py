"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes (usage 2, config 3, data 4, numeric 5);
library code raises them directly.
"""


class UsageError(Exception):
    """Bad command-line arguments or flag values."""


class ConfigError(Exception):
    """Malformed or inconsistent configuration."""


class DataError(Exception):
    """Missing, malformed, or unwritable data files."""


class NumericError(Exception):
    """Numerical failure: divergence, non-convergence, non-finite values."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ShapeError(ValueError):
    """Tensor or layer shape contract violation."""


class GradientStateError(RuntimeError):
    """Backward pass requested without a matching forward pass."""


class PnmError(DataError):
    """PGM/PPM parse failure; carries the byte offset of the defect."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class FrameError(DataError):
    """Corrupt or inconsistent transmission frame header."""
