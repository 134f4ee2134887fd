"""Exception taxonomy shared across the package.

Every error carries a short machine-parseable ``code`` so the CLI can emit
one-line diagnostics (``<code>: <message>``) and map failures to exit status 1.
"""


class LoadcastError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class ShapeError(LoadcastError):
    """Tensor shapes do not satisfy an operation's contract."""

    code = "shape-error"


class SchemaError(LoadcastError):
    """An input file is missing a required column or is malformed."""

    code = "schema-error"


class EmptyInputError(LoadcastError):
    """An input contained no usable rows/pairs."""

    code = "empty-input"


class DegenerateAttentionError(LoadcastError):
    """An attention mask left a query row with no allowed keys."""

    code = "degenerate-attention"


class UndefinedMetricError(LoadcastError):
    """A metric could not be computed (for example, every point excluded)."""

    code = "undefined-metric"


class TrainingDivergedError(LoadcastError):
    """The training loss became NaN/Inf."""

    code = "training-diverged"


class ConfigError(LoadcastError):
    """An experiment config file is invalid."""

    code = "config-error"


class CheckpointError(LoadcastError):
    """A parameter checkpoint file could not be parsed."""

    code = "checkpoint-error"
