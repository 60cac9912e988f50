"""Exception types shared across the pipeline.

Bad inputs or configuration derive from ValueError (the CLI maps these to
exit code 1); failures arising mid-computation derive from RuntimeError
(exit code 2).
"""


class ConfigError(ValueError):
    """Invalid configuration value (ratios, hyperparameters, flags)."""


class FormatError(ValueError):
    """Malformed file content (manifest line, embedding record, WAV header)."""


class IntegrityError(ValueError):
    """Cross-reference violation (unknown speaker, duplicate id, ragged dims)."""


class InsufficientInputError(ValueError):
    """Input too short for the requested transform."""


class DegenerateDataError(ValueError):
    """Training data that cannot support a fit (e.g. a single class)."""


class TrainingError(RuntimeError):
    """Training diverged or failed; the message carries the epoch index."""


class EvaluationError(RuntimeError):
    """No metric could be computed from the given predictions."""


class ProjectionError(RuntimeError):
    """Too little data to project into two dimensions."""
