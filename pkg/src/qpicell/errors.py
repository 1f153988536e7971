"""Exception hierarchy shared by all stages."""


class QpiError(Exception):
    """Base class for every error raised by qpicell."""


class InvalidInputError(QpiError, ValueError):
    pass


class DegenerateInputError(QpiError, ValueError):
    pass


class CalibrationError(QpiError):
    pass


class ConfigurationError(QpiError, ValueError):
    pass


class DivergenceError(QpiError, ArithmeticError):
    pass


class SegmentationError(QpiError):
    pass


class FeatureUndefinedError(QpiError):
    pass


class DegenerateColumnError(QpiError, ValueError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} has zero variance")


class SingularMatrixError(QpiError, ArithmeticError):
    pass


class InsufficientRowsError(QpiError, ValueError):
    pass


class StageError(QpiError):
    """A pipeline stage failed as a whole (for instance too many nuclei dropped)."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {message}")
