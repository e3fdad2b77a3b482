"""BACnet/IP virtual link layer (Annex J) framing.

Every frame on the IP segment starts ``0x81 <function> <u16 length>``.  The
length field counts the whole frame and is recomputed on encode, never
trusted from the caller.  Forwarded-NPDU carries the 6-byte B/IP address of
the originating device ahead of the NPDU so that a passive observer can
attribute forwarded broadcasts.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Union

from .apdu import Apdu, decode_apdu, encode_apdu
from .errors import (
    BvllTypeError,
    EncodeError,
    LengthMismatchError,
    TruncatedFrameError,
)
from .npdu import Npdu, decode_npdu, encode_npdu

BVLL_TYPE = 0x81

FUNC_RESULT = 0x00
FUNC_FORWARDED_NPDU = 0x04
FUNC_REGISTER_FOREIGN_DEVICE = 0x05
FUNC_DISTRIBUTE_BROADCAST = 0x09
FUNC_ORIGINAL_UNICAST = 0x0A
FUNC_ORIGINAL_BROADCAST = 0x0B

RESULT_SUCCESS = 0x0000
RESULT_REGISTER_FD_NAK = 0x0030


@dataclass(frozen=True, slots=True)
class ResultFrame:
    code: int


@dataclass(frozen=True, slots=True)
class RegisterForeignDevice:
    ttl: int  # seconds

    def __post_init__(self) -> None:
        if not 0 <= self.ttl <= 0xFFFF:
            raise EncodeError(f"TTL out of range: {self.ttl}")


@dataclass(frozen=True, slots=True)
class OriginalUnicast:
    npdu: Npdu
    apdu: Apdu


@dataclass(frozen=True, slots=True)
class OriginalBroadcast:
    npdu: Npdu
    apdu: Apdu


@dataclass(frozen=True, slots=True)
class DistributeBroadcast:
    """Foreign device asking the router to rebroadcast on its behalf."""

    npdu: Npdu
    apdu: Apdu


@dataclass(frozen=True, slots=True)
class ForwardedNpdu:
    origin_ip: str
    origin_port: int
    npdu: Npdu
    apdu: Apdu


BvllFrame = Union[
    ResultFrame,
    RegisterForeignDevice,
    OriginalUnicast,
    OriginalBroadcast,
    DistributeBroadcast,
    ForwardedNpdu,
]

_NPDU_FUNCTIONS = {
    OriginalUnicast: FUNC_ORIGINAL_UNICAST,
    OriginalBroadcast: FUNC_ORIGINAL_BROADCAST,
    DistributeBroadcast: FUNC_DISTRIBUTE_BROADCAST,
}


def _bip_address(ip: str, port: int) -> bytes:
    try:
        packed = socket.inet_aton(ip)
    except OSError as exc:
        raise EncodeError(f"bad IPv4 address {ip!r}") from exc
    if not 0 <= port <= 0xFFFF:
        raise EncodeError(f"bad UDP port {port}")
    return packed + struct.pack(">H", port)


def encode_frame(frame: BvllFrame) -> bytes:
    if isinstance(frame, ResultFrame):
        func, payload = FUNC_RESULT, struct.pack(">H", frame.code)
    elif isinstance(frame, RegisterForeignDevice):
        func, payload = FUNC_REGISTER_FOREIGN_DEVICE, struct.pack(">H", frame.ttl)
    elif isinstance(frame, ForwardedNpdu):
        func = FUNC_FORWARDED_NPDU
        payload = _bip_address(frame.origin_ip, frame.origin_port)
        payload += encode_npdu(frame.npdu, encode_apdu(frame.apdu))
    elif type(frame) in _NPDU_FUNCTIONS:
        func = _NPDU_FUNCTIONS[type(frame)]
        payload = encode_npdu(frame.npdu, encode_apdu(frame.apdu))
    else:
        raise EncodeError(f"not a BVLL frame: {frame!r}")
    return bytes([BVLL_TYPE, func]) + struct.pack(">H", 4 + len(payload)) + payload


def decode_frame(data: bytes) -> BvllFrame:
    if len(data) < 4:
        raise TruncatedFrameError(f"frame header needs 4 bytes, got {len(data)}")
    if data[0] != BVLL_TYPE:
        raise BvllTypeError(f"bad BVLL type byte 0x{data[0]:02X}")
    func = data[1]
    declared = struct.unpack(">H", data[2:4])[0]
    if declared != len(data):
        raise LengthMismatchError(f"length field says {declared}, frame is {len(data)}")
    payload = data[4:]
    if func == FUNC_RESULT:
        if len(payload) != 2:
            raise TruncatedFrameError("Result carries a 2-byte code")
        return ResultFrame(struct.unpack(">H", payload)[0])
    if func == FUNC_REGISTER_FOREIGN_DEVICE:
        if len(payload) != 2:
            raise TruncatedFrameError("Register-Foreign-Device carries a 2-byte TTL")
        return RegisterForeignDevice(struct.unpack(">H", payload)[0])
    if func == FUNC_FORWARDED_NPDU:
        if len(payload) < 6:
            raise TruncatedFrameError("Forwarded-NPDU needs a 6-byte origin address")
        origin_ip = socket.inet_ntoa(payload[:4])
        origin_port = struct.unpack(">H", payload[4:6])[0]
        npdu, apdu_bytes = decode_npdu(payload[6:])
        return ForwardedNpdu(origin_ip, origin_port, npdu, decode_apdu(apdu_bytes))
    if func in (FUNC_ORIGINAL_UNICAST, FUNC_ORIGINAL_BROADCAST, FUNC_DISTRIBUTE_BROADCAST):
        npdu, apdu_bytes = decode_npdu(payload)
        apdu = decode_apdu(apdu_bytes)
        if func == FUNC_ORIGINAL_UNICAST:
            return OriginalUnicast(npdu, apdu)
        if func == FUNC_ORIGINAL_BROADCAST:
            return OriginalBroadcast(npdu, apdu)
        return DistributeBroadcast(npdu, apdu)
    raise BvllTypeError(f"unknown BVLL function 0x{func:02X}")
