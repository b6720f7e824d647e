"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(parsing, validation, missing inputs) exit 2, numeric failures exit 3.
"""


class EcgDelinError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(EcgDelinError, ValueError):
    """Malformed signal/annotation/pool file or invalid domain values."""


class ShapeError(EcgDelinError, ValueError):
    """Tensor or mask dimensions incompatible with an operation."""


class ConfigError(EcgDelinError, ValueError):
    """Invalid or unknown configuration values."""


class FitError(EcgDelinError, ValueError):
    """Not enough usable samples to fit a distribution."""


class GenerationError(EcgDelinError, RuntimeError):
    """Synthetic composition cannot proceed (e.g. empty segment pool)."""


class NumericError(EcgDelinError, RuntimeError):
    """Non-finite values encountered where finite math was required."""


class TrainingDiverged(NumericError):
    """Training loss went non-finite; carries the last finite parameters."""

    def __init__(self, message, params=None, log=None):
        super().__init__(message)
        self.params = params
        self.log = log
