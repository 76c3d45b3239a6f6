"""Exception hierarchy shared across the package.

The CLI maps DataError to exit code 2 and NumericalError to exit code 3;
usage problems exit with 1.
"""


class SentmarkError(Exception):
    """Base class for all package errors."""


class DataError(SentmarkError):
    """Malformed input data, violated invariants, or file-format problems."""


class CorpusError(DataError):
    """Invalid example records or dataset construction failures."""


class TextError(DataError):
    """Serialization, vocabulary, or chunking failures."""


class MetricsError(DataError):
    """Invalid inputs to metric computations."""


class CheckpointError(DataError):
    """Checkpoint files that do not match the declared model config."""


class NumericalError(SentmarkError):
    """Non-finite losses or gradients during training."""
