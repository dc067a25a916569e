"""Exception hierarchy shared across the package."""


class MarqueeError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MarqueeError):
    """Array dimensions do not match what an operation requires."""


class DataFormatError(MarqueeError):
    """A file on disk does not conform to its declared format."""


class SchemaError(MarqueeError):
    """A value violates the demographics schema."""


class ConfigError(MarqueeError):
    """Invalid or inconsistent configuration."""


class SamplingError(MarqueeError):
    """Batch or negative sampling could not satisfy its contract."""


class EvaluationError(MarqueeError):
    """An evaluation protocol could not be carried out."""


class ColdStartUnsupportedError(EvaluationError):
    """The model has no cold-start scoring path."""


class MetricError(MarqueeError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class TrainingError(MarqueeError):
    """Training produced a non-finite loss or gradient."""


class StateError(MarqueeError):
    """An operation was called before the state it needs was fitted."""


class MissingOffsetError(MarqueeError, KeyError):
    """A movie was scored in in-matrix mode without a stored offset."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return self.args[0] if self.args else ""
