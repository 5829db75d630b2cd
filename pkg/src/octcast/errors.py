"""Exception types shared across the package."""


class OctcastError(Exception):
    """Base class for all package errors."""


class DegenerateConfiguration(OctcastError):
    pass


class PointAtInfinity(OctcastError):
    pass


class OutOfRange(OctcastError):
    pass


class EmptyTrajectory(OctcastError):
    pass


class NoCandidates(OctcastError):
    pass


class ShapeMismatch(OctcastError, ValueError):
    pass


class OddDimension(OctcastError, ValueError):
    pass


class EmptyHistory(OctcastError):
    pass


class UnmappedAction(OctcastError, KeyError):
    pass


class EmptyPoints(OctcastError):
    pass


class InsufficientObservations(OctcastError):
    pass


class NoVisibleGroundTruth(OctcastError):
    pass


class AllZero(OctcastError):
    pass


class EmptyGroundTruth(OctcastError):
    pass


class SchemaError(OctcastError):
    pass


class ConfigError(OctcastError):
    pass


class NonFiniteLoss(OctcastError):
    pass


class AllTokensAblated(OctcastError):
    pass
