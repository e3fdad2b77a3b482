"""Codec error types.

Decoding must be total over arbitrary byte strings: every malformed input
maps to one of the ``DecodeError`` variants below, never to an uncaught
``IndexError``/``struct.error``.
"""

from __future__ import annotations


class CodecError(ValueError):
    """Base class for all encode/decode failures."""


class EncodeError(CodecError):
    """Frame cannot be produced (oversized payload, out-of-range field)."""


class DecodeError(CodecError):
    """Base class for all decode failures."""


class BvllTypeError(DecodeError):
    """First byte is not 0x81 or the BVLL function is unknown."""


class LengthMismatchError(DecodeError):
    """Declared BVLL length disagrees with the actual byte count."""


class TruncatedFrameError(DecodeError):
    """Input ends before the BVLL header is complete."""


class MalformedNpduError(DecodeError):
    """NPDU truncated, bad version, or unsupported network-layer content."""


class MalformedApduError(DecodeError):
    """APDU truncated or its service body does not parse."""


class UnknownTagError(DecodeError):
    """An application or context tag number outside the supported set."""
