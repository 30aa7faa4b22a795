"""Exception hierarchy shared by every stage of the pipeline."""


class HalphaError(Exception):
    """Base class for all pipeline errors."""


class UnsupportedFormat(HalphaError):
    pass


class CorruptHeader(HalphaError):
    """Malformed header or short payload while reading an image."""


class MissingTimestamp(HalphaError):
    pass


class DiskNotFound(HalphaError):
    pass


class OffDisk(HalphaError, ValueError):
    pass


class OffDiskCentroid(HalphaError):
    pass


class DimensionMismatch(HalphaError, ValueError):
    pass


class NonFinite(HalphaError, ArithmeticError):
    pass


class DegenerateFrame(HalphaError, ValueError):
    pass


class SingularStructureTensor(HalphaError):
    pass


class InsufficientSamples(HalphaError):
    pass


class DegenerateComponent(HalphaError):
    pass


class InvalidScenario(HalphaError, ValueError):
    pass
