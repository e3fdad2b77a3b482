"""APDU encode/decode for the service subset the testbed exercises.

Confirmed services: ReadProperty (12), WriteProperty (15), ReinitializeDevice
(20).  Unconfirmed: I-Am (0), Who-Is (8).  Any other service choice decodes to
:class:`UnsupportedService` so a device can answer with a Reject instead of
the decoder failing.  Segmentation is not implemented; the max-APDU octet is
fixed at 0x05 (1476 bytes).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .errors import EncodeError, MalformedApduError
from .objects import (
    AppTag,
    AppValue,
    ObjectId,
    Reader,
    closing_tag,
    decode_app_value,
    decode_context_unsigned,
    encode_app_value,
    encode_context_unsigned,
    encode_tag,
    opening_tag,
    read_tag,
)

MAX_APDU_BYTES = 1476
_MAX_APDU_OCTET = 0x05  # encodes "up to 1476"

SERVICE_I_AM = 0
SERVICE_WHO_IS = 8
SERVICE_READ_PROPERTY = 12
SERVICE_WRITE_PROPERTY = 15
SERVICE_REINITIALIZE_DEVICE = 20

REINIT_COLDSTART = 0
REINIT_WARMSTART = 1

SEGMENTATION_NONE = 3

REJECT_UNRECOGNIZED_SERVICE = 9

ERROR_CLASS_DEVICE = 0
ERROR_CLASS_OBJECT = 1
ERROR_CLASS_PROPERTY = 2
ERROR_CLASS_SERVICES = 5

ERROR_CODE_DEVICE_BUSY = 3
ERROR_CODE_INVALID_DATATYPE = 9
ERROR_CODE_UNKNOWN_OBJECT = 31
ERROR_CODE_UNKNOWN_PROPERTY = 32
ERROR_CODE_VALUE_OUT_OF_RANGE = 37
ERROR_CODE_WRITE_ACCESS_DENIED = 40


# --- service bodies ---------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ReadPropertyRequest:
    oid: ObjectId
    prop: int


@dataclass(frozen=True, slots=True)
class WritePropertyRequest:
    oid: ObjectId
    prop: int
    value: AppValue
    priority: Optional[int] = None

    def __post_init__(self) -> None:
        if self.priority is not None and not 1 <= self.priority <= 16:
            raise EncodeError(f"write priority out of range: {self.priority}")


@dataclass(frozen=True, slots=True)
class ReinitializeRequest:
    state: int  # REINIT_COLDSTART or REINIT_WARMSTART
    password: Optional[str] = None


@dataclass(frozen=True, slots=True)
class WhoIsRequest:
    """Global when no range is given; otherwise limits by device instance."""

    low: Optional[int] = None
    high: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.low is None) != (self.high is None):
            raise EncodeError("Who-Is range requires both limits")


@dataclass(frozen=True, slots=True)
class IAmRequest:
    device_id: ObjectId
    max_apdu: int = MAX_APDU_BYTES
    segmentation: int = SEGMENTATION_NONE
    vendor_id: int = 15


@dataclass(frozen=True, slots=True)
class ReadPropertyAck:
    oid: ObjectId
    prop: int
    value: AppValue


@dataclass(frozen=True, slots=True)
class UnsupportedService:
    """Service choice outside the implemented subset; body kept opaque."""

    raw_body: bytes = b""


ConfirmedBody = Union[
    ReadPropertyRequest, WritePropertyRequest, ReinitializeRequest, UnsupportedService
]
UnconfirmedBody = Union[WhoIsRequest, IAmRequest, UnsupportedService]


# --- PDUs -------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ConfirmedRequest:
    invoke_id: int
    service: int
    body: ConfirmedBody


@dataclass(frozen=True, slots=True)
class UnconfirmedRequest:
    service: int
    body: UnconfirmedBody


@dataclass(frozen=True, slots=True)
class SimpleAck:
    invoke_id: int
    service: int


@dataclass(frozen=True, slots=True)
class ComplexAck:
    invoke_id: int
    service: int
    body: Union[ReadPropertyAck, UnsupportedService]


@dataclass(frozen=True, slots=True)
class ErrorPdu:
    invoke_id: int
    service: int
    error_class: int
    error_code: int


@dataclass(frozen=True, slots=True)
class RejectPdu:
    invoke_id: int
    reason: int


Apdu = Union[ConfirmedRequest, UnconfirmedRequest, SimpleAck, ComplexAck, ErrorPdu, RejectPdu]

_PDU_CONFIRMED = 0x00
_PDU_UNCONFIRMED = 0x10
_PDU_SIMPLE_ACK = 0x20
_PDU_COMPLEX_ACK = 0x30
_PDU_ERROR = 0x50
_PDU_REJECT = 0x60


# --- builders ---------------------------------------------------------------

def build_read_property(oid: ObjectId, prop: int, invoke_id: int) -> ConfirmedRequest:
    return ConfirmedRequest(invoke_id, SERVICE_READ_PROPERTY, ReadPropertyRequest(oid, prop))


def build_write_property(
    oid: ObjectId,
    prop: int,
    value: AppValue,
    invoke_id: int,
    priority: Optional[int] = None,
) -> ConfirmedRequest:
    return ConfirmedRequest(
        invoke_id, SERVICE_WRITE_PROPERTY, WritePropertyRequest(oid, prop, value, priority)
    )


def build_reinitialize(
    state: int, invoke_id: int, password: Optional[str] = None
) -> ConfirmedRequest:
    return ConfirmedRequest(
        invoke_id, SERVICE_REINITIALIZE_DEVICE, ReinitializeRequest(state, password)
    )


def build_who_is(low: Optional[int] = None, high: Optional[int] = None) -> UnconfirmedRequest:
    return UnconfirmedRequest(SERVICE_WHO_IS, WhoIsRequest(low, high))


def build_i_am(device_id: ObjectId, vendor_id: int = 15) -> UnconfirmedRequest:
    return UnconfirmedRequest(SERVICE_I_AM, IAmRequest(device_id, vendor_id=vendor_id))


def build_simple_ack(request: ConfirmedRequest) -> SimpleAck:
    return SimpleAck(request.invoke_id, request.service)


def build_read_ack(request: ConfirmedRequest, value: AppValue) -> ComplexAck:
    body = request.body
    assert isinstance(body, ReadPropertyRequest)
    return ComplexAck(
        request.invoke_id, request.service, ReadPropertyAck(body.oid, body.prop, value)
    )


def build_error(request: ConfirmedRequest, error_class: int, error_code: int) -> ErrorPdu:
    return ErrorPdu(request.invoke_id, request.service, error_class, error_code)


def build_reject(request: ConfirmedRequest, reason: int = REJECT_UNRECOGNIZED_SERVICE) -> RejectPdu:
    return RejectPdu(request.invoke_id, reason)


# --- encoding ---------------------------------------------------------------

def _encode_char_string_content(text: str) -> bytes:
    return b"\x00" + text.encode("utf-8")  # charset 0 = UTF-8


def _encode_confirmed_body(service: int, body: ConfirmedBody) -> bytes:
    if isinstance(body, UnsupportedService):
        return body.raw_body
    if service == SERVICE_READ_PROPERTY and isinstance(body, ReadPropertyRequest):
        out = encode_tag(0, True, 4) + body.oid.encode()
        out += encode_context_unsigned(1, body.prop)
        return out
    if service == SERVICE_WRITE_PROPERTY and isinstance(body, WritePropertyRequest):
        out = encode_tag(0, True, 4) + body.oid.encode()
        out += encode_context_unsigned(1, body.prop)
        out += opening_tag(3) + encode_app_value(body.value) + closing_tag(3)
        if body.priority is not None:
            out += encode_context_unsigned(4, body.priority)
        return out
    if service == SERVICE_REINITIALIZE_DEVICE and isinstance(body, ReinitializeRequest):
        out = encode_context_unsigned(0, body.state)
        if body.password is not None:
            content = _encode_char_string_content(body.password)
            out += encode_tag(1, True, len(content)) + content
        return out
    raise EncodeError(f"service {service} does not match body {type(body).__name__}")


def _encode_unconfirmed_body(service: int, body: UnconfirmedBody) -> bytes:
    if isinstance(body, UnsupportedService):
        return body.raw_body
    if service == SERVICE_WHO_IS and isinstance(body, WhoIsRequest):
        if body.low is None:
            return b""
        return encode_context_unsigned(0, body.low) + encode_context_unsigned(1, body.high)
    if service == SERVICE_I_AM and isinstance(body, IAmRequest):
        return (
            encode_app_value(AppValue.object_id(body.device_id))
            + encode_app_value(AppValue.unsigned(body.max_apdu))
            + encode_app_value(AppValue.enumerated(body.segmentation))
            + encode_app_value(AppValue.unsigned(body.vendor_id))
        )
    raise EncodeError(f"service {service} does not match body {type(body).__name__}")


def encode_apdu(apdu: Apdu) -> bytes:
    if isinstance(apdu, ConfirmedRequest):
        _check_u8(apdu.invoke_id, "invoke_id")
        data = bytes([_PDU_CONFIRMED, _MAX_APDU_OCTET, apdu.invoke_id, apdu.service])
        data += _encode_confirmed_body(apdu.service, apdu.body)
    elif isinstance(apdu, UnconfirmedRequest):
        data = bytes([_PDU_UNCONFIRMED, apdu.service])
        data += _encode_unconfirmed_body(apdu.service, apdu.body)
    elif isinstance(apdu, SimpleAck):
        _check_u8(apdu.invoke_id, "invoke_id")
        data = bytes([_PDU_SIMPLE_ACK, apdu.invoke_id, apdu.service])
    elif isinstance(apdu, ComplexAck):
        _check_u8(apdu.invoke_id, "invoke_id")
        data = bytes([_PDU_COMPLEX_ACK, apdu.invoke_id, apdu.service])
        body = apdu.body
        if isinstance(body, ReadPropertyAck):
            data += encode_tag(0, True, 4) + body.oid.encode()
            data += encode_context_unsigned(1, body.prop)
            data += opening_tag(3) + encode_app_value(body.value) + closing_tag(3)
        else:
            data += body.raw_body
    elif isinstance(apdu, ErrorPdu):
        _check_u8(apdu.invoke_id, "invoke_id")
        data = bytes([_PDU_ERROR, apdu.invoke_id, apdu.service])
        data += encode_app_value(AppValue.enumerated(apdu.error_class))
        data += encode_app_value(AppValue.enumerated(apdu.error_code))
    elif isinstance(apdu, RejectPdu):
        _check_u8(apdu.invoke_id, "invoke_id")
        _check_u8(apdu.reason, "reject reason")
        data = bytes([_PDU_REJECT, apdu.invoke_id, apdu.reason])
    else:
        raise EncodeError(f"not an APDU: {apdu!r}")
    if len(data) > MAX_APDU_BYTES:
        raise EncodeError(f"APDU exceeds {MAX_APDU_BYTES} bytes")
    return data


def _check_u8(value: int, what: str) -> None:
    if not 0 <= value <= 0xFF:
        raise EncodeError(f"{what} out of range: {value}")


# --- decoding ---------------------------------------------------------------

def _decode_context_object_id(r: Reader, tag_number: int) -> ObjectId:
    head = read_tag(r)
    if not head.context or head.number != tag_number or head.length != 4:
        raise MalformedApduError(f"expected 4-byte context tag {tag_number}")
    return ObjectId.decode(r.take(4))


def _decode_confirmed_body(service: int, r: Reader) -> ConfirmedBody:
    if service == SERVICE_READ_PROPERTY:
        oid = _decode_context_object_id(r, 0)
        prop = decode_context_unsigned(r, 1)
        return ReadPropertyRequest(oid, prop)
    if service == SERVICE_WRITE_PROPERTY:
        oid = _decode_context_object_id(r, 0)
        prop = decode_context_unsigned(r, 1)
        head = read_tag(r)
        if not head.is_opening or head.number != 3:
            raise MalformedApduError("expected opening tag 3 around write value")
        value = decode_app_value(r)
        head = read_tag(r)
        if not head.is_closing or head.number != 3:
            raise MalformedApduError("expected closing tag 3 after write value")
        priority = None
        if r.remaining():
            priority = decode_context_unsigned(r, 4)
            if not 1 <= priority <= 16:
                raise MalformedApduError(f"write priority out of range: {priority}")
        return WritePropertyRequest(oid, prop, value, priority)
    if service == SERVICE_REINITIALIZE_DEVICE:
        state = decode_context_unsigned(r, 0)
        password = None
        if r.remaining():
            head = read_tag(r)
            if not head.context or head.number != 1:
                raise MalformedApduError("expected context tag 1 password")
            content = r.take(head.length)
            if not content or content[0] != 0x00:
                raise MalformedApduError("only UTF-8 passwords supported")
            try:
                password = content[1:].decode("utf-8")
            except UnicodeDecodeError as exc:
                raise MalformedApduError("invalid UTF-8 in password") from exc
        return ReinitializeRequest(state, password)
    return UnsupportedService(r.take(r.remaining()))


def _decode_unconfirmed_body(service: int, r: Reader) -> UnconfirmedBody:
    if service == SERVICE_WHO_IS:
        if not r.remaining():
            return WhoIsRequest()
        low = decode_context_unsigned(r, 0)
        high = decode_context_unsigned(r, 1)
        return WhoIsRequest(low, high)
    if service == SERVICE_I_AM:
        device = decode_app_value(r)
        max_apdu = decode_app_value(r)
        seg = decode_app_value(r)
        vendor = decode_app_value(r)
        if (
            device.kind is not AppTag.OBJECT_ID
            or max_apdu.kind is not AppTag.UNSIGNED
            or seg.kind is not AppTag.ENUMERATED
            or vendor.kind is not AppTag.UNSIGNED
        ):
            raise MalformedApduError("malformed I-Am parameters")
        return IAmRequest(device.value, max_apdu.value, seg.value, vendor.value)  # type: ignore[arg-type]
    return UnsupportedService(r.take(r.remaining()))


def _decode_enumerated(r: Reader, what: str) -> int:
    v = decode_app_value(r)
    if v.kind is not AppTag.ENUMERATED:
        raise MalformedApduError(f"expected enumerated {what}")
    return v.value  # type: ignore[return-value]


def decode_apdu(data: bytes) -> Apdu:
    r = Reader(data, MalformedApduError)
    pdu_type = r.u8() & 0xF0
    if pdu_type == _PDU_CONFIRMED:
        r.u8()  # max-segments / max-APDU octet; segmentation unsupported
        invoke_id = r.u8()
        service = r.u8()
        body = _decode_confirmed_body(service, r)
        apdu: Apdu = ConfirmedRequest(invoke_id, service, body)
    elif pdu_type == _PDU_UNCONFIRMED:
        service = r.u8()
        apdu = UnconfirmedRequest(service, _decode_unconfirmed_body(service, r))
    elif pdu_type == _PDU_SIMPLE_ACK:
        apdu = SimpleAck(r.u8(), r.u8())
    elif pdu_type == _PDU_COMPLEX_ACK:
        invoke_id = r.u8()
        service = r.u8()
        if service == SERVICE_READ_PROPERTY:
            oid = _decode_context_object_id(r, 0)
            prop = decode_context_unsigned(r, 1)
            head = read_tag(r)
            if not head.is_opening or head.number != 3:
                raise MalformedApduError("expected opening tag 3 around read result")
            value = decode_app_value(r)
            head = read_tag(r)
            if not head.is_closing or head.number != 3:
                raise MalformedApduError("expected closing tag 3 after read result")
            apdu = ComplexAck(invoke_id, service, ReadPropertyAck(oid, prop, value))
        else:
            apdu = ComplexAck(invoke_id, service, UnsupportedService(r.take(r.remaining())))
    elif pdu_type == _PDU_ERROR:
        invoke_id = r.u8()
        service = r.u8()
        eclass = _decode_enumerated(r, "error class")
        ecode = _decode_enumerated(r, "error code")
        apdu = ErrorPdu(invoke_id, service, eclass, ecode)
    elif pdu_type == _PDU_REJECT:
        apdu = RejectPdu(r.u8(), r.u8())
    else:
        raise MalformedApduError(f"unsupported PDU type 0x{pdu_type:02X}")
    if r.remaining():
        raise MalformedApduError(f"{r.remaining()} trailing bytes after APDU")
    return apdu
