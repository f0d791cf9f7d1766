"""Exception hierarchy shared across the package.

Each branch carries the process exit code the CLI maps it to.
"""


class DenseqError(Exception):
    exit_code = 1


class ConfigurationError(DenseqError):
    """Bad configuration: incompatible dims, invalid architecture, bad options."""

    exit_code = 2


class DimensionError(ConfigurationError):
    """Tensor shapes do not line up for the requested operation."""


class CompatibilityError(ConfigurationError):
    """Model parameters do not match the expected architecture fingerprint."""


class DataError(DenseqError):
    """Malformed or empty input data."""

    exit_code = 3


class VocabularyError(DataError):
    """Words not covered by a required vocabulary or mapping."""

    def __init__(self, message, words=()):
        super().__init__(message)
        self.words = tuple(words)


class StructureError(DataError):
    """A lattice violates its structural invariants."""


class NumericError(DenseqError):
    """Non-finite values where finite ones are required."""

    exit_code = 4


class TrainingError(NumericError):
    """Training diverged. Carries the last finite parameter snapshot."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class OptimizationError(NumericError):
    """A search loop exhausted its budget without any finite objective."""
