"""Exception hierarchy.

The CLI maps these onto its exit codes: validation problems exit with 1,
numerical failures with 2.
"""


class GestureKitError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GestureKitError, ValueError):
    """Input violates a documented invariant, shape or file format."""


class NumericalError(GestureKitError, ArithmeticError):
    """A computation could not be carried out to the required accuracy."""


class DegenerateConfigurationError(NumericalError):
    """Control points do not determine a unique thin-plate spline."""


class StageError(GestureKitError):
    """Wraps a failure inside one pipeline stage, keeping the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
