"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; CLI exits with code 1."""


class DataFormatError(ValueError):
    """Malformed on-disk record; message carries file, line and field."""


class CoverageGapError(ValueError):
    """A required time interval is not covered by measurements or a trajectory."""


class DegenerateMatchError(RuntimeError):
    """Correspondence matching produced nothing usable."""


class DegenerateGeometryError(RuntimeError):
    """Normal equations are rank-deficient; carries the near-null direction."""

    def __init__(self, message: str, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class AssociationError(ValueError):
    """Trajectory association produced zero pairs."""
