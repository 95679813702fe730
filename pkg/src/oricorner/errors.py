"""Exception types raised across the package."""


class OriCornerError(Exception):
    """Base class for all package errors."""


class InvalidPolygon(OriCornerError, ValueError):
    pass


class VertexCollision(OriCornerError, ValueError):
    """Two polygon vertices fall into the same raster cell."""


class DomainEmpty(OriCornerError, ValueError):
    """A masked average was requested over an empty domain."""


class EmptyMask(OriCornerError, ValueError):
    pass


class PlacementFailure(OriCornerError, RuntimeError):
    """Scene generation could not place the requested instances."""


class UndefinedMetric(OriCornerError, ValueError):
    pass


class ConfigError(OriCornerError, ValueError):
    pass
