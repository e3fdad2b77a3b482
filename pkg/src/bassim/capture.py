"""Traffic capture: pcap and JSON-lines writers plus flow statistics.

The fabric tap hands over one record per wire event.  The IP segment is
additionally written as a classic pcap with synthesized Ethernet/IPv4/UDP
framing so stock dissectors decode the BACnet/IP payloads; the field bus
has no faithful standard linktype and appears only in the JSON-lines log.

Tap records carry wire-arrival timestamps but arrive in send order, so
every writer sorts by time before emitting.
"""

from __future__ import annotations

import json
import struct
from dataclasses import replace
from typing import Iterable, Optional, Sequence

from .bacnet import apdu as ap
from .bacnet import bvll
from .bacnet.errors import DecodeError
from .bacnet.npdu import decode_npdu
from .netfabric import US, NodeAddr, TapRecord

BACNET_PORT = 47808

_PCAP_MAGIC = 0xA1B2C3D4
_PCAP_SNAPLEN = 65535
_LINKTYPE_ETHERNET = 1
_GLOBAL_HEADER = struct.pack(
    "<IHHiIII", _PCAP_MAGIC, 2, 4, 0, 0, _PCAP_SNAPLEN, _LINKTYPE_ETHERNET
)

_ETHERTYPE_IPV4 = b"\x08\x00"
_BROADCAST_MAC = b"\xff" * 6


class PacketLog:
    """In-memory capture buffer; pass ``log.tap`` as the fabric tap."""

    def __init__(self) -> None:
        self.packets: list[TapRecord] = []

    def tap(self, rec: TapRecord) -> None:
        self.packets.append(rec)

    def ip_packets(self, network: int = 1) -> list[TapRecord]:
        return [p for p in self.packets if p.segment == network]


def _in_time_order(packets: Iterable[TapRecord]) -> list[TapRecord]:
    # stable: simultaneous packets keep send order
    return sorted(packets, key=lambda rec: rec.t_us)


# --- service classification ---------------------------------------------------

_CONFIRMED_NAMES = {
    ap.SERVICE_READ_PROPERTY: "read-property",
    ap.SERVICE_WRITE_PROPERTY: "write-property",
    ap.SERVICE_REINITIALIZE_DEVICE: "reinitialize-device",
}
_UNCONFIRMED_NAMES = {
    ap.SERVICE_I_AM: "i-am",
    ap.SERVICE_WHO_IS: "who-is",
}


def _apdu_service(pdu: ap.Apdu) -> str:
    if isinstance(pdu, ap.ConfirmedRequest):
        return _CONFIRMED_NAMES.get(pdu.service, f"confirmed-{pdu.service}")
    if isinstance(pdu, ap.UnconfirmedRequest):
        return _UNCONFIRMED_NAMES.get(pdu.service, f"unconfirmed-{pdu.service}")
    if isinstance(pdu, ap.SimpleAck):
        return "simple-ack"
    if isinstance(pdu, ap.ComplexAck):
        return "complex-ack"
    if isinstance(pdu, ap.ErrorPdu):
        return "error"
    return "reject"


def classify_service(payload: bytes, on_ip_segment: bool) -> str:
    """Best-effort service label; anything undecodable is "malformed"."""
    try:
        if on_ip_segment:
            frame = bvll.decode_frame(payload)
            if isinstance(frame, bvll.RegisterForeignDevice):
                return "register-foreign-device"
            if isinstance(frame, bvll.ResultFrame):
                return "bvlc-result"
            return _apdu_service(frame.apdu)
        _, tail = decode_npdu(payload)
        return _apdu_service(ap.decode_apdu(tail))
    except DecodeError:
        return "malformed"


# --- address rendering ----------------------------------------------------------

def dst_label(rec: TapRecord) -> str:
    """Wire destination as text; broadcasts get the /24 directed address."""
    if rec.dst is not None:
        return rec.dst.label()
    if rec.src.is_ip:
        prefix = rec.src.ip_str.rsplit(".", 1)[0]
        return f"{prefix}.255:{BACNET_PORT}"
    return f"net{rec.segment}/broadcast"


# --- pcap writer ----------------------------------------------------------------

def ipv4_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _synthesize_frame(rec: TapRecord, ident: int) -> bytes:
    """Ethernet II + IPv4 + UDP wrapper around the raw BVLL bytes.

    MACs are locally administered, derived from the node's IP octets; a
    broadcast gets ff:ff:ff:ff:ff:ff and the /24 directed address.
    """
    src_ip = rec.src.mac[:4]
    src_mac = b"\x02\x00" + src_ip
    if rec.dst is None:
        dst_mac = _BROADCAST_MAC
        dst_ip = src_ip[:3] + b"\xff"
        dst_port = BACNET_PORT
    else:
        dst_ip = rec.dst.mac[:4]
        dst_mac = b"\x02\x00" + dst_ip
        dst_port = rec.dst.port
    udp_len = 8 + len(rec.payload)
    ip_header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,  # version 4, IHL 5
        0,
        20 + udp_len,
        ident & 0xFFFF,
        0,
        64,  # TTL
        17,  # UDP
        0,  # checksum placeholder
        src_ip,
        dst_ip,
    )
    checksum = ipv4_checksum(ip_header)
    ip_header = ip_header[:10] + struct.pack(">H", checksum) + ip_header[12:]
    udp_header = struct.pack(">HHHH", rec.src.port, dst_port, udp_len, 0)
    return dst_mac + src_mac + _ETHERTYPE_IPV4 + ip_header + udp_header + rec.payload


def write_pcap(packets: Iterable[TapRecord], path, epoch_s: int = 0) -> int:
    """Write IP-segment packets as a classic little-endian pcap.

    ``epoch_s`` anchors sim time zero to a wall-clock instant so the
    timestamps read as the scenario's calendar day.  Returns the packet
    count.  Dropped packets are included: the wire saw them even if no
    node answered to the address.
    """
    count = 0
    with open(path, "wb") as out:
        out.write(_GLOBAL_HEADER)
        for rec in _in_time_order(packets):
            if not rec.src.is_ip:
                raise ValueError("pcap writer accepts IP-segment packets only")
            frame = _synthesize_frame(rec, count)
            header = struct.pack(
                "<IIII",
                epoch_s + rec.t_us // US,
                rec.t_us % US,
                len(frame),
                len(frame),
            )
            out.write(header + frame)
            count += 1
    return count


def read_pcap(path) -> list[TapRecord]:
    """Re-parse a pcap produced by :func:`write_pcap` into tap records.

    Timestamps come back absolute (seconds since the Unix epoch times 1e6),
    so counts, byte totals, and rates survive a round trip but minute
    indices shift by the capture epoch.  Frames whose destination MAC is
    the broadcast address map back to ``dst=None``.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 24:
        raise ValueError("truncated pcap header")
    if struct.unpack_from("<I", data)[0] == _PCAP_MAGIC:
        endian = "<"
    elif struct.unpack_from(">I", data)[0] == _PCAP_MAGIC:
        endian = ">"
    else:
        raise ValueError("not a classic pcap file")
    linktype = struct.unpack_from(endian + "I", data, 20)[0]
    if linktype != _LINKTYPE_ETHERNET:
        raise ValueError(f"unsupported linktype {linktype}")
    records: list[TapRecord] = []
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            raise ValueError(f"truncated packet header at offset {offset}")
        ts_sec, ts_usec, incl_len, _ = struct.unpack_from(endian + "IIII", data, offset)
        offset += 16
        frame = data[offset : offset + incl_len]
        if len(frame) != incl_len:
            raise ValueError(f"truncated packet body at offset {offset}")
        offset += incl_len
        if frame[12:14] != _ETHERTYPE_IPV4:
            raise ValueError(f"unexpected ethertype at offset {offset}")
        src_ip = ".".join(str(b) for b in frame[26:30])
        dst_ip = ".".join(str(b) for b in frame[30:34])
        src_port, dst_port = struct.unpack_from(">HH", frame, 34)
        payload = frame[42:]
        src = NodeAddr.ip(1, src_ip, src_port)
        dst: Optional[NodeAddr] = None
        if frame[0:6] != _BROADCAST_MAC:
            dst = NodeAddr.ip(1, dst_ip, dst_port)
        records.append(
            TapRecord(ts_sec * US + ts_usec, 1, src, dst, payload, "delivered")
        )
    return records


# --- JSON-lines writer ----------------------------------------------------------

def packet_json(rec: TapRecord) -> dict:
    return {
        "v": 1,
        "t": rec.t_us / US,
        "segment": rec.segment,
        "src": rec.src.label(),
        "dst": dst_label(rec),
        "len": len(rec.payload),
        "service": classify_service(rec.payload, rec.src.is_ip),
        "verdict": rec.verdict,
    }


def write_jsonl(packets: Iterable[TapRecord], path) -> int:
    """One JSON object per packet, all segments, time-ordered."""
    count = 0
    with open(path, "w", encoding="utf-8") as out:
        for rec in _in_time_order(packets):
            out.write(json.dumps(packet_json(rec), separators=(",", ":")))
            out.write("\n")
            count += 1
    return count


# --- flow statistics -------------------------------------------------------------

def summarize(packets: Sequence[TapRecord]) -> dict:
    """Aggregate per-(src, dst) flow statistics.

    The mean rate uses each flow's own first-to-last span: a flood that is
    active for 90 minutes of a 24-hour capture reports the flood rate, not
    the rate diluted over the whole day.  A single-packet flow has no span
    and reports rate 0.  Per-minute counts index minutes of capture time.
    """
    ordered = _in_time_order(packets)
    flows: dict[tuple[str, str], dict] = {}
    total_bytes = 0
    for rec in ordered:
        key = (rec.src.label(), dst_label(rec))
        flow = flows.get(key)
        if flow is None:
            flow = flows[key] = {
                "packets": 0,
                "bytes": 0,
                "first_us": rec.t_us,
                "last_us": rec.t_us,
                "services": {},
                "minutes": {},
            }
        size = len(rec.payload)
        flow["packets"] += 1
        flow["bytes"] += size
        flow["last_us"] = rec.t_us
        total_bytes += size
        service = classify_service(rec.payload, rec.src.is_ip)
        flow["services"][service] = flow["services"].get(service, 0) + 1
        minute = rec.t_us // (60 * US)
        flow["minutes"][minute] = flow["minutes"].get(minute, 0) + 1

    span_s = (ordered[-1].t_us - ordered[0].t_us) / US if ordered else 0.0
    out_flows = []
    for (src, dst), flow in sorted(flows.items()):
        flow_span_s = (flow["last_us"] - flow["first_us"]) / US
        rate = flow["packets"] / flow_span_s if flow_span_s > 0 else 0.0
        out_flows.append(
            {
                "src": src,
                "dst": dst,
                "packets": flow["packets"],
                "bytes": flow["bytes"],
                "mean_rate_pps": rate,
                "services": dict(sorted(flow["services"].items())),
                "per_minute": [
                    [minute, n] for minute, n in sorted(flow["minutes"].items())
                ],
            }
        )
    return {
        "v": 1,
        "packets": len(ordered),
        "bytes": total_bytes,
        "span_s": span_s,
        "flows": out_flows,
    }


def write_flows(packets: Sequence[TapRecord], path) -> dict:
    stats = summarize(packets)
    with open(path, "w", encoding="utf-8") as out:
        json.dump(stats, out, indent=2, sort_keys=True)
        out.write("\n")
    return stats


def summarize_pcap(path) -> dict:
    """Flow statistics straight from a capture file.

    Runs anchor their pcap epoch at the scenario date's midnight UTC and
    always carry discovery traffic near time zero, so flooring the first
    packet's timestamp to its UTC day recovers sim-relative time and the
    result matches the flows the run wrote itself.
    """
    records = read_pcap(path)
    if records:
        day_us = 86_400 * US
        epoch_us = (records[0].t_us // day_us) * day_us
        records = [replace(rec, t_us=rec.t_us - epoch_us) for rec in records]
    return summarize(records)
