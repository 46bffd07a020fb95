"""Exception hierarchy shared by all gearnet modules."""


class GearNetError(Exception):
    """Base class for every error raised by this package."""


# structure / dataset / checkpoint I/O
class MalformedRecord(GearNetError):
    pass


class EmptyStructure(GearNetError):
    pass


class SchemaError(GearNetError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BadMagic(GearNetError):
    pass


class VersionMismatch(GearNetError):
    pass


class TruncatedFile(GearNetError):
    pass


# geometry
class DegenerateGeometry(GearNetError):
    pass


class OutOfDomain(GearNetError):
    pass


# tensors
class ShapeMismatch(GearNetError):
    pass


class IndexOutOfRange(GearNetError):
    pass


class NonFiniteError(GearNetError):
    pass


class BadTarget(GearNetError):
    pass


class UninitializedParams(GearNetError):
    pass


# objectives and training
class ZeroNormEmbedding(GearNetError):
    pass


class NoEdges(GearNetError):
    pass


class NoAdjacentPairs(GearNetError):
    pass


class NoTriplets(GearNetError):
    pass


class NoPositives(GearNetError):
    pass


class EmptyDataset(GearNetError):
    pass
