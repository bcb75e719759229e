"""Exception types. Each carries the CLI exit code it maps to."""


class VoxelHopError(Exception):
    exit_code = 1


class DimensionError(VoxelHopError, ValueError):
    """Shapes that do not fit together (window too large, odd pooling extent, ...)."""

    exit_code = 4


class InsufficientDataError(VoxelHopError, ValueError):
    """Too few samples, a missing class, or a class smaller than the cluster count."""

    exit_code = 5


class ConfigError(VoxelHopError, ValueError):
    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FormatError(VoxelHopError, IOError):
    """Malformed, truncated or otherwise unreadable file."""

    exit_code = 2


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass
