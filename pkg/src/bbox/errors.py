"""Exception types shared across the package."""


class BboxError(Exception):
    """Base class for all container and loader errors."""


class InvalidHeader(BboxError):
    pass


class BadMagic(InvalidHeader):
    pass


class UnsupportedVersion(InvalidHeader):
    pass


class SchemaMismatch(BboxError):
    pass


class InvalidFile(BboxError):
    pass


class CorruptPayload(BboxError):
    pass


class DimsExceedMax(BboxError):
    pass


class SourceError(BboxError):
    pass


class CapacityTooSmall(BboxError):
    pass


class PageNotResident(BboxError):
    pass


class SpecMismatch(BboxError):
    pass


class ShutdownError(BboxError):
    pass


class IndexOutOfRange(BboxError, IndexError):
    pass
