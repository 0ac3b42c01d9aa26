"""
exceptions.py - Error hierarchy for the denoising toolkit

Every error raised on purpose by the package derives from GLRError. Errors about bad
arguments also derive from ValueError.
"""


class GLRError(Exception):
    """Base class for all toolkit errors."""
    pass


class EmptyInputError(GLRError, ValueError):
    """Raised when a cloud or point set has no points."""

    def __init__(self, message: str = "empty input"):
        super().__init__(message)


class InvalidCoordinateError(GLRError, ValueError):
    """Raised when a coordinate is NaN or infinite."""
    pass


class PatchSizeError(GLRError, ValueError):
    """Raised when a patch asks for more points than the cloud holds."""

    def __init__(self, message: str = "patch larger than cloud"):
        super().__init__(message)


class NeighborCountError(GLRError, ValueError):
    """Raised when a neighbor or sample count is out of range for the point set."""
    pass


class UnderdeterminedNormalError(GLRError, ValueError):
    """Raised when a patch has fewer than three points."""

    def __init__(self, message: str = "underdetermined normal"):
        super().__init__(message)


class DegeneratePlaneError(GLRError, ValueError):
    """Raised when three interpolation points do not span a usable plane."""

    def __init__(self, message: str = "degenerate interpolation plane"):
        super().__init__(message)


class InvalidGraphError(GLRError, ValueError):
    """Raised for malformed weights, correspondences, index maps or Laplacians."""
    pass


class DimensionMismatchError(GLRError, ValueError):
    """Raised when a vector length does not match the matrix dimension."""
    pass


class CoverageError(GLRError, ValueError):
    """Raised when some cloud point belongs to no patch."""

    def __init__(self, message: str = "coverage violated"):
        super().__init__(message)


class NumericalBreakdownError(GLRError, ArithmeticError):
    """Raised when a solve produces NaN or Inf."""

    def __init__(self, message: str = "numerical breakdown"):
        super().__init__(message)


class OracleLimitError(GLRError, ValueError):
    """Raised when a dense reference computation is asked for a too large matrix."""

    def __init__(self, message: str = "oracle limit"):
        super().__init__(message)


class CloudFormatError(GLRError, ValueError):
    """Raised when a point cloud file cannot be parsed."""
    pass


class ConfigError(GLRError, ValueError):
    """Raised when a configuration file or flag holds an invalid value."""
    pass


class PipelineStageError(GLRError):
    """Wraps an error raised inside the denoising loop with its iteration and stage."""

    def __init__(self, iteration: int, stage: str, cause: Exception):
        self.iteration = iteration
        self.stage = stage
        self.cause = cause
        super().__init__(f"iteration {iteration}, stage '{stage}': {type(cause).__name__}: {cause}")
