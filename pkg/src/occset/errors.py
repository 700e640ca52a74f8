"""Exception hierarchy shared by every occset module."""


class OccsetError(Exception):
    """Base class for all library errors."""


class LengthMismatch(OccsetError, ValueError):
    pass


class InvalidClassId(OccsetError, ValueError):
    pass


class NonFiniteCoordinate(OccsetError, ValueError):
    pass


class EmptySet(OccsetError, ValueError):
    pass


class MissingLabels(OccsetError, ValueError):
    pass


class NonFiniteCost(OccsetError, ValueError):
    pass


class ScheduleViolation(OccsetError, ValueError):
    pass


class ProbabilityOutOfRange(OccsetError, ValueError):
    pass


class CountNotRepresentable(OccsetError, ValueError):
    pass


class OutOfBounds(OccsetError, ValueError):
    pass


class ShapeMismatch(OccsetError, ValueError):
    pass


class GridMismatch(OccsetError, ValueError):
    pass


class PrimitiveOutOfRoi(OccsetError, ValueError):
    pass


class InsufficientData(OccsetError, ValueError):
    pass


class FormatError(OccsetError, ValueError):
    """Base for binary file format problems."""


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class DimsOverflow(FormatError):
    pass
