"""Exception hierarchy shared by every pipeline stage."""


class PoreCritError(Exception):
    """Base class for all data/processing errors raised by porecrit."""


class ConfigError(PoreCritError):
    pass


# volume_io
class NoSlices(PoreCritError):
    pass


class InconsistentStack(PoreCritError):
    def __init__(self, message: str, filename: str | None = None):
        super().__init__(message)
        self.filename = filename


class FormatError(PoreCritError):
    pass


class PlacementFailure(PoreCritError):
    pass


# segmentation
class EmptyMask(PoreCritError):
    pass


# descriptors
class EmptyRegion(PoreCritError):
    pass


class NoBoundary(PoreCritError):
    pass


# network
class EmptyNetwork(PoreCritError):
    pass


# model
class TooFewSamples(PoreCritError):
    pass


class InvalidData(PoreCritError):
    pass


class ArityError(PoreCritError):
    pass


# shapley
class EnumerationLimit(PoreCritError):
    pass


class NoBackground(PoreCritError):
    pass


class UnknownFeature(PoreCritError):
    pass


# reporting
class NoData(PoreCritError):
    pass


class IoError(PoreCritError):
    pass
