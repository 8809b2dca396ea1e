"""Exception types shared across the package."""


class FcplError(Exception):
    """Base class for all errors raised by fcpl."""


class DegenerateNorm(FcplError, ValueError):
    """A vector is too close to zero to be L2-normalized."""


class DimensionMismatch(FcplError, ValueError):
    pass


class NoNegativeAvailable(FcplError, ValueError):
    """Every mining candidate shares the anchor's class."""


class NonFiniteLoss(FcplError, FloatingPointError):
    """Training produced a NaN or infinite loss."""


class IntervalOutOfBounds(FcplError, ValueError):
    pass


class MissingVideo(FcplError, KeyError):
    pass


class MismatchedSets(FcplError, ValueError):
    """Descriptor sets cannot be ensembled (different video, timestamps or dim)."""


class CorruptFile(FcplError, ValueError):
    pass


class EmptyGroundTruth(FcplError, ValueError):
    pass


class ConfigError(FcplError, ValueError):
    pass
