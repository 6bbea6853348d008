"""Exception types shared across the pipeline."""


class StressfuseError(Exception):
    """Base class for all library errors."""


class SchemaError(StressfuseError):
    """A CSV file or config is missing a declared column or field."""


class FormatError(StressfuseError):
    """A file exists but its contents violate the documented format."""


class AlignmentError(StressfuseError):
    """Streams cannot be joined into one session (ID mismatch, no overlap)."""


class SpecError(StressfuseError):
    """An invalid generator / model / experiment specification."""


class LengthError(StressfuseError):
    """A series is too short for the requested operation."""


class LabelError(StressfuseError):
    """A stress value lies outside the 0-19 scale."""


class DegenerateFrameError(StressfuseError):
    """A landmark frame with zero inter-ocular distance."""


class ShapeError(StressfuseError):
    """Tensor or layer shapes are inconsistent."""


class NumericError(StressfuseError):
    """Non-finite values where finite ones are required."""


class DataError(StressfuseError):
    """Not enough (or unusable) data for a fit."""


class MetricError(StressfuseError):
    """Metrics requested on an empty confusion matrix."""


class FoldError(StressfuseError):
    """Cross-validation folds cannot be formed."""


class EmptyMatrixError(DataError):
    """Every window was dropped during feature extraction."""


class DependencyError(StressfuseError):
    """A CLI stage is missing an upstream artifact."""
