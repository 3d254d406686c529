"""Exception types shared across the package."""


class OapgenError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OapgenError):
    """Invalid configuration value or conflicting configuration sources."""


class GridFormatError(OapgenError):
    """Grid file cannot be parsed or violates a grid invariant."""


class NoPathError(OapgenError):
    """Start and goal are not connected through valid grid nodes."""


class PathValidationError(OapgenError):
    """A node sequence is not a valid grid path (non-neighbor step)."""
