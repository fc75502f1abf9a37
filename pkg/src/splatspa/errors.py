"""Exception types shared across the package."""


class SplatSpaError(Exception):
    """Base class for all splatspa errors."""


class InvalidParameterError(SplatSpaError, ValueError):
    """Gaussian or settings parameters are non-finite or out of range."""


class ShapeMismatchError(SplatSpaError, ValueError):
    """Two arrays that must agree in shape do not."""


class InvalidBudgetError(SplatSpaError, ValueError):
    """A keep-budget exceeds (or equals, where forbidden) the available count."""


class TrainingDivergedError(SplatSpaError, RuntimeError):
    """Loss became non-finite; carries the iteration and offending column."""

    def __init__(self, iteration, column, message=None):
        self.iteration = iteration
        self.column = column
        super().__init__(
            message
            or f"non-finite values at iteration {iteration} (column: {column})"
        )


class CheckpointError(SplatSpaError):
    """Base for checkpoint I/O failures."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint file is truncated or malformed."""


class VersionMismatchError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class PlyError(SplatSpaError):
    """Base for PLY parsing/writing failures."""


class PlySchemaError(PlyError):
    """A required vertex property is missing; names the missing properties."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing required PLY properties: " + ", ".join(self.missing))


class UnsupportedImageError(SplatSpaError, ValueError):
    """Image file format or mode is not supported."""


class ConfigError(SplatSpaError, ValueError):
    """Run configuration is invalid; message names the offending fields."""
