"""Exception hierarchy shared by every vidmem module."""

from __future__ import annotations


class VidMemError(Exception):
    """Base class for all engine errors."""


class InvalidDimension(VidMemError, ValueError):
    pass


class DegenerateVector(VidMemError, ValueError):
    pass


class InvalidArgument(VidMemError, ValueError):
    pass


class MissingTrace(VidMemError, KeyError):
    pass


class OutOfOrderClip(VidMemError, ValueError):
    pass


class ContextOverflow(VidMemError):
    """The assembled context would exceed its token budget."""


class EmptyStore(VidMemError):
    pass


class TraceFormatError(VidMemError):
    """Malformed trace file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedVersion(VidMemError):
    def __init__(self, version: int):
        super().__init__(f"unsupported trace format version {version}")
        self.version = version
