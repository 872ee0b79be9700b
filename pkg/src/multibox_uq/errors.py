"""Exception hierarchy shared across the package."""


class MultiboxError(Exception):
    """Base class for every error raised by this package."""


# imaging
class MissingFile(MultiboxError, FileNotFoundError):
    pass


class UnsupportedFormat(MultiboxError):
    pass


class CorruptHeader(MultiboxError):
    pass


class BadMagic(MultiboxError):
    pass


class DimensionMismatch(MultiboxError, ValueError):
    pass


class IoFailure(MultiboxError, OSError):
    pass


# prompts / segmenter
class EmptyMask(MultiboxError, ValueError):
    pass


class EmptyCandidateList(MultiboxError, ValueError):
    pass


class BackendUnavailable(MultiboxError):
    pass


class ProtocolViolation(MultiboxError):
    pass


class BackendError(MultiboxError):
    """The backend answered ``ERR <message>``."""

    def __init__(self, message):
        super().__init__(message)
        self.message = message


# harness
class EmptyDataset(MultiboxError):
    pass
