"""Exception types raised across the package."""


class SgfError(Exception):
    """Base class for all package errors."""


class HorizonError(SgfError, ValueError):
    """A pixel ray does not hit the ground plane in front of the camera."""


class EmptyQueue(SgfError, ValueError):
    pass


class DimensionMismatch(SgfError, ValueError):
    pass


class EmptyShape(SgfError, ValueError):
    pass


class DegenerateShape(SgfError, ValueError):
    """Too few ground points survive back-projection and downsampling."""


class ParamMismatch(SgfError, ValueError):
    pass


class TooFewPoints(SgfError, ValueError):
    pass


class GroupMismatch(SgfError, ValueError):
    pass


class SingularSystem(SgfError, RuntimeError):
    """The normal equations cannot be solved (usually: gauge not fixed)."""


class NoOverlap(SgfError, ValueError):
    """No timestamps could be associated between two trajectories."""


class ManifestError(SgfError, ValueError):
    """A dataset directory is incomplete or inconsistent."""


class ConfigError(SgfError, ValueError):
    pass
