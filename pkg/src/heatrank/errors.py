"""Exception types raised across the heatrank package."""


class HeatrankError(Exception):
    """Base class for all heatrank errors."""


class FormatError(HeatrankError):
    """A persisted artifact violates its binary layout.

    ``offset`` is the byte position of the first violation.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class NegativeOrNonFiniteValue(FormatError):
    pass


class IoFailure(HeatrankError):
    pass


class EmptyFeatureSet(HeatrankError):
    pass


class ZeroNormFeature(HeatrankError):
    pass


class SingularSystem(HeatrankError):
    pass


class ZeroAggregate(HeatrankError):
    pass


class LengthMismatch(HeatrankError):
    pass


class InsufficientTrainingData(HeatrankError):
    pass


class DimensionMismatch(HeatrankError):
    pass


class DimensionExceedsModel(HeatrankError):
    pass


class DuplicateId(HeatrankError):
    pass


class NormViolation(HeatrankError):
    pass


class DimMismatch(HeatrankError):
    pass


class EmptyRanking(HeatrankError):
    pass


class MalformedQueryLine(HeatrankError):
    pass


class MissingList(HeatrankError):
    pass


class NoPositives(HeatrankError):
    pass
