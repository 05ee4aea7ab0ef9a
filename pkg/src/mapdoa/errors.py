"""Exception hierarchy shared by all modules."""


class MapDoaError(Exception):
    """Base class for errors raised by :mod:`mapdoa`."""


class NotPositiveDefinite(MapDoaError):
    pass


class NotPSD(MapDoaError):
    pass


class NoConvergence(MapDoaError):
    pass


class InvalidCorrelation(MapDoaError):
    pass


class RankDeficient(MapDoaError):
    pass


class EnumerationTooLarge(MapDoaError):
    pass


class SubspaceDegenerate(MapDoaError):
    pass


class PlanError(MapDoaError):
    """Malformed experiment plan or scenario file."""
