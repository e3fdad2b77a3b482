"""Object identifiers, application values, and clause-20 tag primitives.

Only the subset of ASHRAE 135 data types that the testbed's traffic uses is
implemented.  All encodings are big-endian; Real is 32-bit IEEE-754 and is
canonicalised to single precision on construction so that values round-trip
through the wire format unchanged.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import DecodeError, EncodeError, MalformedApduError, UnknownTagError

MAX_INSTANCE = (1 << 22) - 1


class ObjectType(enum.IntEnum):
    ANALOG_INPUT = 0
    ANALOG_OUTPUT = 1
    ANALOG_VALUE = 2
    BINARY_OUTPUT = 4
    BINARY_VALUE = 5
    DEVICE = 8


#: Property identifiers the testbed reads/writes.
PROP_PRESENT_VALUE = 85
PROP_OBJECT_NAME = 77
PROP_STATUS_FLAGS = 111
PROP_UNITS = 117

KNOWN_PROPERTIES = frozenset(
    {PROP_PRESENT_VALUE, PROP_OBJECT_NAME, PROP_STATUS_FLAGS, PROP_UNITS}
)

PROPERTY_NAMES = {
    PROP_PRESENT_VALUE: "present-value",
    PROP_OBJECT_NAME: "object-name",
    PROP_STATUS_FLAGS: "status-flags",
    PROP_UNITS: "units",
}

_OBJECT_TYPE_NAMES = {
    ObjectType.ANALOG_INPUT: "analog-input",
    ObjectType.ANALOG_OUTPUT: "analog-output",
    ObjectType.ANALOG_VALUE: "analog-value",
    ObjectType.BINARY_OUTPUT: "binary-output",
    ObjectType.BINARY_VALUE: "binary-value",
    ObjectType.DEVICE: "device",
}
_OBJECT_TYPE_BY_NAME = {v: k for k, v in _OBJECT_TYPE_NAMES.items()}


@dataclass(frozen=True, slots=True)
class ObjectId:
    """BACnet object identifier: 10-bit type + 22-bit instance."""

    object_type: ObjectType
    instance: int

    def __post_init__(self) -> None:
        if not isinstance(self.object_type, ObjectType):
            object.__setattr__(self, "object_type", ObjectType(self.object_type))
        if not 0 <= self.instance <= MAX_INSTANCE:
            raise EncodeError(f"object instance out of range: {self.instance}")

    def encode(self) -> bytes:
        return struct.pack(">I", (int(self.object_type) << 22) | self.instance)

    @classmethod
    def decode(cls, data: bytes) -> "ObjectId":
        if len(data) != 4:
            raise MalformedApduError("object identifier must be 4 bytes")
        word = struct.unpack(">I", data)[0]
        type_num = word >> 22
        try:
            otype = ObjectType(type_num)
        except ValueError as exc:
            raise UnknownTagError(f"unsupported object type {type_num}") from exc
        return cls(otype, word & MAX_INSTANCE)

    def __str__(self) -> str:
        return f"{_OBJECT_TYPE_NAMES[self.object_type]}:{self.instance}"

    @classmethod
    def parse(cls, text: str) -> "ObjectId":
        """Parse the ``analog-value:1`` notation used in point names."""
        type_name, _, instance = text.partition(":")
        if type_name not in _OBJECT_TYPE_BY_NAME or not instance.isdigit():
            raise ValueError(f"bad object id {text!r}")
        return cls(_OBJECT_TYPE_BY_NAME[type_name], int(instance))


class AppTag(enum.IntEnum):
    """Application tag numbers (clause 20.2.1.4)."""

    NULL = 0
    BOOLEAN = 1
    UNSIGNED = 2
    SIGNED = 3
    REAL = 4
    CHAR_STRING = 7
    ENUMERATED = 9
    OBJECT_ID = 12


def _f32(value: float) -> float:
    return struct.unpack(">f", struct.pack(">f", value))[0]


@dataclass(frozen=True, slots=True)
class AppValue:
    """A tagged application value as carried in APDUs.

    ``value`` holds ``None`` (Null), ``bool``, ``int``, ``float`` (single
    precision), ``str`` or :class:`ObjectId` depending on ``kind``.
    """

    kind: AppTag
    value: object = None

    def __post_init__(self) -> None:
        k, v = self.kind, self.value
        if k is AppTag.NULL:
            if v is not None:
                raise EncodeError("Null carries no value")
        elif k is AppTag.BOOLEAN:
            if not isinstance(v, bool):
                raise EncodeError("Boolean requires bool")
        elif k in (AppTag.UNSIGNED, AppTag.ENUMERATED):
            if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= 0xFFFFFFFF:
                raise EncodeError(f"{k.name} requires u32, got {v!r}")
        elif k is AppTag.SIGNED:
            if not isinstance(v, int) or isinstance(v, bool) or not -(2**31) <= v <= 2**31 - 1:
                raise EncodeError(f"Signed requires i32, got {v!r}")
        elif k is AppTag.REAL:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise EncodeError(f"Real requires float, got {v!r}")
            object.__setattr__(self, "value", _f32(float(v)))
        elif k is AppTag.CHAR_STRING:
            if not isinstance(v, str):
                raise EncodeError("CharString requires str")
        elif k is AppTag.OBJECT_ID:
            if not isinstance(v, ObjectId):
                raise EncodeError("ObjectIdentifier requires ObjectId")
        else:  # pragma: no cover - enum is closed
            raise EncodeError(f"unsupported tag {k}")

    @classmethod
    def null(cls) -> "AppValue":
        return cls(AppTag.NULL)

    @classmethod
    def boolean(cls, v: bool) -> "AppValue":
        return cls(AppTag.BOOLEAN, bool(v))

    @classmethod
    def unsigned(cls, v: int) -> "AppValue":
        return cls(AppTag.UNSIGNED, v)

    @classmethod
    def signed(cls, v: int) -> "AppValue":
        return cls(AppTag.SIGNED, v)

    @classmethod
    def real(cls, v: float) -> "AppValue":
        return cls(AppTag.REAL, v)

    @classmethod
    def enumerated(cls, v: int) -> "AppValue":
        return cls(AppTag.ENUMERATED, v)

    @classmethod
    def char_string(cls, v: str) -> "AppValue":
        return cls(AppTag.CHAR_STRING, v)

    @classmethod
    def object_id(cls, v: ObjectId) -> "AppValue":
        return cls(AppTag.OBJECT_ID, v)


class Reader:
    """Sequential byte cursor that raises a configurable error on underrun."""

    __slots__ = ("data", "pos", "error")

    def __init__(self, data: bytes, error: type[DecodeError] = MalformedApduError):
        self.data = data
        self.pos = 0
        self.error = error

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def peek_u8(self) -> int:
        if self.remaining() < 1:
            raise self.error("unexpected end of data")
        return self.data[self.pos]

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise self.error(f"unexpected end of data (wanted {n} bytes)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]


# --- clause 20.2 tag layer -------------------------------------------------

def encode_tag(number: int, context: bool, lvt: int) -> bytes:
    """Emit a tag octet (plus extended-length octets when needed).

    ``lvt`` is the length for constructed-length tags; opening/closing tags
    use the dedicated helpers below.
    """
    if number > 14:
        raise EncodeError("tag numbers above 14 not supported")
    cls_bit = 0x08 if context else 0x00
    head = (number << 4) | cls_bit
    if lvt < 5:
        return bytes([head | lvt])
    if lvt <= 253:
        return bytes([head | 5, lvt])
    if lvt <= 0xFFFF:
        return bytes([head | 5, 254]) + struct.pack(">H", lvt)
    return bytes([head | 5, 255]) + struct.pack(">I", lvt)


def opening_tag(number: int) -> bytes:
    return bytes([(number << 4) | 0x08 | 0x06])


def closing_tag(number: int) -> bytes:
    return bytes([(number << 4) | 0x08 | 0x07])


@dataclass(frozen=True, slots=True)
class TagHead:
    number: int
    context: bool
    length: int
    is_opening: bool = False
    is_closing: bool = False


def read_tag(r: Reader) -> TagHead:
    head = r.u8()
    number = head >> 4
    context = bool(head & 0x08)
    lvt = head & 0x07
    if number == 0x0F:
        raise UnknownTagError("extended tag numbers not supported")
    if context and lvt == 6:
        return TagHead(number, True, 0, is_opening=True)
    if context and lvt == 7:
        return TagHead(number, True, 0, is_closing=True)
    if lvt == 5:
        ext = r.u8()
        if ext == 254:
            lvt = r.u16()
        elif ext == 255:
            lvt = struct.unpack(">I", r.take(4))[0]
        else:
            lvt = ext
    return TagHead(number, context, lvt)


def _encode_unsigned_content(value: int) -> bytes:
    n = max(1, (value.bit_length() + 7) // 8)
    return value.to_bytes(n, "big")


def _encode_signed_content(value: int) -> bytes:
    if value == 0:
        return b"\x00"
    n = (value.bit_length() + 8) // 8 if value > 0 else ((-value - 1).bit_length() + 8) // 8
    return value.to_bytes(n, "big", signed=True)


def encode_app_value(v: AppValue) -> bytes:
    k = v.kind
    if k is AppTag.NULL:
        return encode_tag(0, False, 0)
    if k is AppTag.BOOLEAN:
        # boolean stores its value in the tag's LVT field
        return bytes([(AppTag.BOOLEAN << 4) | (1 if v.value else 0)])
    if k in (AppTag.UNSIGNED, AppTag.ENUMERATED):
        content = _encode_unsigned_content(v.value)  # type: ignore[arg-type]
        return encode_tag(int(k), False, len(content)) + content
    if k is AppTag.SIGNED:
        content = _encode_signed_content(v.value)  # type: ignore[arg-type]
        return encode_tag(int(k), False, len(content)) + content
    if k is AppTag.REAL:
        return encode_tag(int(k), False, 4) + struct.pack(">f", v.value)
    if k is AppTag.CHAR_STRING:
        content = b"\x00" + str(v.value).encode("utf-8")  # charset 0 = UTF-8
        return encode_tag(int(k), False, len(content)) + content
    if k is AppTag.OBJECT_ID:
        return encode_tag(int(k), False, 4) + v.value.encode()  # type: ignore[union-attr]
    raise EncodeError(f"cannot encode {k}")  # pragma: no cover


def decode_app_value(r: Reader) -> AppValue:
    head = read_tag(r)
    if head.context or head.is_opening or head.is_closing:
        raise MalformedApduError("expected an application tag")
    try:
        tag = AppTag(head.number)
    except ValueError as exc:
        raise UnknownTagError(f"unsupported application tag {head.number}") from exc
    if tag is AppTag.NULL:
        return AppValue.null()
    if tag is AppTag.BOOLEAN:
        return AppValue.boolean(head.length == 1)
    content = r.take(head.length)
    if tag in (AppTag.UNSIGNED, AppTag.ENUMERATED):
        if not 1 <= len(content) <= 4:
            raise MalformedApduError("unsigned content must be 1..4 bytes")
        return AppValue(tag, int.from_bytes(content, "big"))
    if tag is AppTag.SIGNED:
        if not 1 <= len(content) <= 4:
            raise MalformedApduError("signed content must be 1..4 bytes")
        return AppValue.signed(int.from_bytes(content, "big", signed=True))
    if tag is AppTag.REAL:
        if len(content) != 4:
            raise MalformedApduError("real content must be 4 bytes")
        return AppValue.real(struct.unpack(">f", content)[0])
    if tag is AppTag.CHAR_STRING:
        if not content or content[0] != 0x00:
            raise MalformedApduError("only UTF-8 character strings supported")
        try:
            return AppValue.char_string(content[1:].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise MalformedApduError("invalid UTF-8 in character string") from exc
    if tag is AppTag.OBJECT_ID:
        return AppValue.object_id(ObjectId.decode(content))
    raise UnknownTagError(f"unsupported application tag {head.number}")  # pragma: no cover


def encode_context_unsigned(tag_number: int, value: int) -> bytes:
    content = _encode_unsigned_content(value)
    return encode_tag(tag_number, True, len(content)) + content


def decode_context_unsigned(r: Reader, tag_number: int) -> int:
    head = read_tag(r)
    if not head.context or head.number != tag_number or head.is_opening or head.is_closing:
        raise MalformedApduError(f"expected context tag {tag_number}")
    content = r.take(head.length)
    if not 1 <= len(content) <= 4:
        raise MalformedApduError("context unsigned must be 1..4 bytes")
    return int.from_bytes(content, "big")
