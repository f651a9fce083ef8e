"""Exception classes shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message wording.
"""


class ConfigError(ValueError):
    """Invalid hyperparameter, ratio, or flag combination."""


class DataError(ValueError):
    """Problem with input data (files, entries, checkpoints)."""


class ParseError(DataError):
    """Malformed input line; the message carries the line number."""


class ValidationError(DataError):
    """Structurally parseable input that violates an invariant."""


class TrainingError(RuntimeError):
    """Numerical failure during optimization (e.g. non-finite loss)."""
