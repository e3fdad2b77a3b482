"""Minimal BACnet codec: clause-20 tags, APDU/NPDU headers, Annex J framing."""

from .apdu import (
    Apdu,
    ComplexAck,
    ConfirmedRequest,
    ErrorPdu,
    IAmRequest,
    ReadPropertyAck,
    ReadPropertyRequest,
    ReinitializeRequest,
    RejectPdu,
    SimpleAck,
    UnconfirmedRequest,
    UnsupportedService,
    WhoIsRequest,
    WritePropertyRequest,
    build_error,
    build_i_am,
    build_read_ack,
    build_read_property,
    build_reinitialize,
    build_reject,
    build_simple_ack,
    build_who_is,
    build_write_property,
    decode_apdu,
    encode_apdu,
)
from .bvll import (
    BvllFrame,
    DistributeBroadcast,
    ForwardedNpdu,
    OriginalBroadcast,
    OriginalUnicast,
    RegisterForeignDevice,
    ResultFrame,
    decode_frame,
    encode_frame,
)
from .errors import (
    BvllTypeError,
    CodecError,
    DecodeError,
    EncodeError,
    LengthMismatchError,
    MalformedApduError,
    MalformedNpduError,
    TruncatedFrameError,
    UnknownTagError,
)
from .npdu import GLOBAL_BROADCAST_DNET, Npdu, decode_npdu, encode_npdu
from .objects import AppTag, AppValue, ObjectId, ObjectType

__all__ = [name for name in dir() if not name.startswith("_")]
