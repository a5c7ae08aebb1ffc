"""Exception types raised across the package."""


class VaffError(Exception):
    """Base class for all package errors."""


class RangeError(VaffError, ValueError):
    """Pixel or probability values outside their allowed range."""


class GeometryError(VaffError, ValueError):
    """Arrays whose shapes do not agree."""


class AnnotationError(VaffError, ValueError):
    """Junction annotations that are malformed or out of bounds."""


class IncompleteSampleError(VaffError, FileNotFoundError):
    """A sample directory is missing one of its required files."""


class GenerationError(VaffError, RuntimeError):
    """A phantom configuration that cannot be satisfied."""


class NumericError(VaffError, ArithmeticError):
    """Non-finite values reached a loss computation."""


class NumericDivergence(NumericError):
    """Training produced a non-finite loss and was aborted."""


class NoDataError(VaffError, RuntimeError):
    """A dataset split contains no samples."""


class IncompatibleCheckpoint(VaffError, ValueError):
    """A checkpoint manifest does not match the requested configuration."""
