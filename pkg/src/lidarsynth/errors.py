"""Exception hierarchy for the pipeline."""


class LidarSynthError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LidarSynthError, ValueError):
    """Input violates a documented precondition or invariant."""


class EmptyInputError(InvalidInputError):
    """Operation requires at least one element."""


class DegenerateGeometryError(LidarSynthError):
    """Geometry too degenerate to proceed (e.g. fewer than 3 ICP correspondences)."""


class EmptyMeshError(LidarSynthError):
    """Surface reconstruction produced no triangles (no valid seed at any radius)."""


class PlyParseError(LidarSynthError):
    """Malformed PLY content. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(LidarSynthError):
    """Bad pipeline configuration (maps to exit code 1)."""


class PipelineStageError(LidarSynthError):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
