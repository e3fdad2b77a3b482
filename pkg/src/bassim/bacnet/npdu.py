"""Network-layer (NPDU) header encode/decode.

Only APDU-carrying NPDUs are modeled (network-layer messages such as
Who-Is-Router are out of scope).  The header carries optional destination and
source specifiers used by the router between the IP and field segments;
``dnet == 0xFFFF`` addresses every network (global broadcast) and a present
``dnet`` with no ``dadr`` addresses every station on that network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional

from .errors import EncodeError, MalformedNpduError
from .objects import Reader

GLOBAL_BROADCAST_DNET = 0xFFFF
DEFAULT_HOP_COUNT = 255

_CTRL_NET_MESSAGE = 0x80
_CTRL_DEST = 0x20
_CTRL_SRC = 0x08
_CTRL_EXPECTS_REPLY = 0x04


@dataclass(frozen=True, slots=True)
class Npdu:
    expects_reply: bool = False
    priority: int = 0
    dnet: Optional[int] = None
    dadr: Optional[bytes] = None
    snet: Optional[int] = None
    sadr: Optional[bytes] = None
    hop_count: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 <= self.priority <= 3:
            raise EncodeError(f"priority out of range: {self.priority}")
        if self.dnet is None:
            if self.dadr is not None or self.hop_count is not None:
                raise EncodeError("dadr/hop_count require dnet")
        else:
            if not 0 <= self.dnet <= 0xFFFF:
                raise EncodeError(f"dnet out of range: {self.dnet}")
            if self.hop_count is None or not 0 <= self.hop_count <= 255:
                raise EncodeError("dnet requires hop_count 0..255")
            if self.dnet == GLOBAL_BROADCAST_DNET and self.dadr:
                raise EncodeError("global broadcast carries no dadr")
            if self.dadr is not None and not 1 <= len(self.dadr) <= 6:
                raise EncodeError("dadr must be 1..6 bytes")
        if (self.snet is None) != (self.sadr is None):
            raise EncodeError("snet and sadr go together")
        if self.snet is not None:
            if not 0 <= self.snet <= 0xFFFE:
                raise EncodeError(f"snet out of range: {self.snet}")
            if not 1 <= len(self.sadr) <= 6:
                raise EncodeError("sadr must be 1..6 bytes")

    @property
    def is_global_broadcast(self) -> bool:
        return self.dnet == GLOBAL_BROADCAST_DNET

    def decrement_hop(self) -> "Npdu":
        assert self.hop_count is not None
        return replace(self, hop_count=self.hop_count - 1)

    def with_source(self, snet: int, sadr: bytes) -> "Npdu":
        return replace(self, snet=snet, sadr=sadr)

    def without_destination(self) -> "Npdu":
        return replace(self, dnet=None, dadr=None, hop_count=None)


def encode_npdu(npdu: Npdu, apdu_bytes: bytes) -> bytes:
    control = npdu.priority
    if npdu.expects_reply:
        control |= _CTRL_EXPECTS_REPLY
    if npdu.dnet is not None:
        control |= _CTRL_DEST
    if npdu.snet is not None:
        control |= _CTRL_SRC
    out = bytearray([1, control])
    if npdu.dnet is not None:
        dadr = npdu.dadr or b""
        out += struct.pack(">H", npdu.dnet)
        out.append(len(dadr))
        out += dadr
    if npdu.snet is not None:
        out += struct.pack(">H", npdu.snet)
        out.append(len(npdu.sadr))
        out += npdu.sadr
    if npdu.dnet is not None:
        out.append(npdu.hop_count)
    return bytes(out) + apdu_bytes


def decode_npdu(data: bytes) -> tuple[Npdu, bytes]:
    """Split raw network-layer bytes into the header and the APDU tail."""
    r = Reader(data, MalformedNpduError)
    version = r.u8()
    if version != 1:
        raise MalformedNpduError(f"unsupported NPDU version {version}")
    control = r.u8()
    if control & _CTRL_NET_MESSAGE:
        raise MalformedNpduError("network-layer messages not supported")
    dnet = dadr = snet = sadr = hop = None
    if control & _CTRL_DEST:
        dnet = r.u16()
        dlen = r.u8()
        if dlen > 6:
            raise MalformedNpduError(f"dlen {dlen} exceeds 6")
        dadr = r.take(dlen) if dlen else None
    if control & _CTRL_SRC:
        snet = r.u16()
        slen = r.u8()
        if not 1 <= slen <= 6:
            raise MalformedNpduError(f"slen {slen} out of range 1..6")
        sadr = r.take(slen)
    if control & _CTRL_DEST:
        hop = r.u8()
    try:
        npdu = Npdu(
            expects_reply=bool(control & _CTRL_EXPECTS_REPLY),
            priority=control & 0x03,
            dnet=dnet,
            dadr=dadr,
            snet=snet,
            sadr=sadr,
            hop_count=hop,
        )
    except EncodeError as exc:
        raise MalformedNpduError(str(exc)) from exc
    return npdu, r.take(r.remaining())
