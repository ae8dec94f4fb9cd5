"""Exception types raised across the simulator."""


class SpecSenseError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SpecSenseError, ValueError):
    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class PlacementFailure(SpecSenseError):
    """Rejection sampling could not honour the minimum SU spacing."""


class DegenerateGeometry(SpecSenseError):
    """An SU sits exactly on a PU location (zero distance)."""


class DimensionMismatch(SpecSenseError, ValueError):
    pass


class SolverDiverged(SpecSenseError):
    """The proximal-gradient iterates became non-finite."""


class NoSamples(SpecSenseError, ValueError):
    pass


class NoActiveChannels(SpecSenseError, ValueError):
    pass


class NoInactiveChannels(SpecSenseError, ValueError):
    pass


class CellDegenerate(SpecSenseError):
    """Too many trials of a sweep cell failed."""
