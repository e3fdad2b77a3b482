"""Deterministic discrete-event message fabric.

Two segments joined by a router: a BACnet/IP LAN carrying Annex J frames and
an ARCNET-like field bus carrying raw NPDU bytes.  The field bus is modeled
as a logical shared bus with per-message latency rather than token-passing;
only topology and routing semantics matter to the experiments.

Determinism: event time is integer microseconds; ties break on a monotonic
sequence number; all jitter comes from per-segment PRNG streams seeded from
the scenario seed, so identical (scenario, seed) gives an identical event
sequence.  Everything runs on one logical simulation thread.
"""

from __future__ import annotations

import heapq
import logging
import random
import socket
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from .bacnet import bvll
from .bacnet.apdu import decode_apdu, encode_apdu
from .bacnet.errors import DecodeError
from .bacnet.npdu import GLOBAL_BROADCAST_DNET, decode_npdu, encode_npdu

log = logging.getLogger(__name__)

US = 1_000_000  # microseconds per second


class DuplicateAddressError(ValueError):
    """A second node tried to claim an address already attached."""


class UnattachedSenderError(ValueError):
    """send() was called from an address that is not attached."""


@dataclass(frozen=True, slots=True)
class NodeAddr:
    """Address on one segment: IPv4+port on the LAN, 1-byte station on the bus."""

    network: int
    mac: bytes

    @classmethod
    def ip(cls, network: int, address: str, port: int = 47808) -> "NodeAddr":
        return cls(network, socket.inet_aton(address) + struct.pack(">H", port))

    @classmethod
    def station(cls, network: int, station: int) -> "NodeAddr":
        if not 0 <= station <= 255:
            raise ValueError(f"station out of range: {station}")
        return cls(network, bytes([station]))

    @property
    def is_ip(self) -> bool:
        return len(self.mac) == 6

    @property
    def ip_str(self) -> str:
        return socket.inet_ntoa(self.mac[:4])

    @property
    def port(self) -> int:
        return struct.unpack(">H", self.mac[4:6])[0]

    @property
    def station_id(self) -> int:
        return self.mac[0]

    def label(self) -> str:
        if self.is_ip:
            return f"{self.ip_str}:{self.port}"
        return f"net{self.network}/st{self.station_id}"


@dataclass(frozen=True, slots=True)
class Delivery:
    """One packet handed to a node handler.

    ``dst`` is the wire destination (None for a broadcast); ``recipient`` is
    the attached node this copy is for.
    """

    t_us: int
    segment: int
    src: NodeAddr
    dst: Optional[NodeAddr]
    recipient: NodeAddr
    payload: bytes

    @property
    def is_broadcast(self) -> bool:
        return self.dst is None


@dataclass(frozen=True, slots=True)
class TapRecord:
    """One packet as seen on the wire (single record per broadcast)."""

    t_us: int
    segment: int
    src: NodeAddr
    dst: Optional[NodeAddr]
    payload: bytes
    verdict: str  # "delivered" or "dropped"


Handler = Callable[[Delivery], None]
Tap = Callable[[TapRecord], None]


@dataclass(slots=True)
class Segment:
    network: int
    base_latency: float
    jitter: float
    rng: random.Random
    nodes: dict[NodeAddr, Handler] = field(default_factory=dict)

    def latency_us(self) -> int:
        lat = self.base_latency
        if self.jitter:
            lat += self.rng.uniform(-self.jitter, self.jitter)
        return max(0, int(round(lat * US)))


class TimerHandle:
    __slots__ = ("fn", "cancelled")

    def __init__(self, fn: Callable[[], None]):
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass(slots=True)
class ForeignDeviceEntry:
    addr: NodeAddr
    expires_us: int


class Fabric:
    """Event heap, segments, and the foreign-device broadcast table."""

    def __init__(self, seed: str | int, tap: Optional[Tap] = None, fd_table_cap: int = 16):
        self.seed = seed
        self.tap = tap
        self.fd_table_cap = fd_table_cap
        self.ip_network = 1  # segment whose broadcasts fan out to foreign devices
        self.now_us = 0
        self._seq = 0
        self._heap: list[tuple[int, int, object]] = []
        self.segments: dict[int, Segment] = {}
        self._last_due: dict[tuple[NodeAddr, NodeAddr], int] = {}
        self.foreign_devices: dict[NodeAddr, ForeignDeviceEntry] = {}
        # set by the router: re-wraps an IP broadcast for foreign-device delivery
        self.fd_forward_transform: Optional[Callable[[bytes, NodeAddr], Optional[bytes]]] = None
        self.drop_count = 0

    @property
    def now_s(self) -> float:
        return self.now_us / US

    def stream(self, label: str) -> random.Random:
        """Named PRNG stream; a fixed label always yields the same sequence."""
        return random.Random(f"{self.seed}:{label}")

    def add_segment(self, network: int, base_latency: float, jitter: float) -> Segment:
        if network in self.segments:
            raise ValueError(f"segment {network} already exists")
        seg = Segment(network, base_latency, jitter, self.stream(f"link:{network}"))
        self.segments[network] = seg
        return seg

    def attach(self, addr: NodeAddr, handler: Handler) -> None:
        seg = self.segments[addr.network]
        if addr in seg.nodes:
            raise DuplicateAddressError(f"{addr.label()} already attached")
        seg.nodes[addr] = handler

    def detach(self, addr: NodeAddr) -> None:
        self.segments[addr.network].nodes.pop(addr, None)

    # -- scheduling -----------------------------------------------------------

    def _push(self, due_us: int, item: object) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (max(due_us, self.now_us), self._seq, item))

    def call_at(self, t_s: float, fn: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle(fn)
        self._push(int(round(t_s * US)), handle)
        return handle

    def call_later(self, delay_s: float, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self.now_s + delay_s, fn)

    def send(self, src: NodeAddr, dst: Optional[NodeAddr], payload: bytes) -> None:
        seg = self.segments.get(src.network)
        if seg is None or src not in seg.nodes:
            raise UnattachedSenderError(f"{src.label()} is not attached")
        due_us = self.now_us + seg.latency_us()
        if dst is not None:
            if dst.network != src.network:
                raise ValueError("unicast must stay on the sender's segment")
            if dst not in seg.nodes:
                self.drop_count += 1
                log.debug("drop: no node at %s", dst.label())
                self._tap(due_us, seg.network, src, dst, payload, "dropped")
                return
            self._tap(due_us, seg.network, src, dst, payload, "delivered")
            self._schedule_delivery(seg, src, dst, dst, payload, due_us)
            return
        # broadcast: one wire record, fan-out to all other attached nodes
        self._tap(due_us, seg.network, src, None, payload, "delivered")
        for node in list(seg.nodes):
            if node != src:
                self._schedule_delivery(seg, src, node, None, payload, due_us)
        if seg.network == self.ip_network and self.fd_forward_transform is not None:
            self._forward_to_foreign_devices(seg, src, payload, due_us)
    def _schedule_delivery(
        self,
        seg: Segment,
        src: NodeAddr,
        recipient: NodeAddr,
        dst_field: Optional[NodeAddr],
        payload: bytes,
        due_us: int,
    ) -> None:
        # per-(src,dst) monotone clamp keeps FIFO despite jitter
        key = (src, recipient)
        due_us = max(due_us, self._last_due.get(key, 0))
        self._last_due[key] = due_us
        self._push(due_us, Delivery(due_us, seg.network, src, dst_field, recipient, payload))

    def _forward_to_foreign_devices(
        self, seg: Segment, src: NodeAddr, payload: bytes, base_due_us: int
    ) -> None:
        live = self.live_foreign_devices()
        if not live:
            return
        forwarded = self.fd_forward_transform(payload, src)
        if forwarded is None:
            return
        for entry in live:
            if entry.addr == src or entry.addr not in seg.nodes:
                continue
            self._tap(base_due_us, seg.network, src, entry.addr, forwarded, "delivered")
            self._schedule_delivery(seg, src, entry.addr, entry.addr, forwarded, base_due_us)

    # -- foreign-device table ---------------------------------------------------

    def live_foreign_devices(self) -> list[ForeignDeviceEntry]:
        dead = [a for a, e in self.foreign_devices.items() if e.expires_us <= self.now_us]
        for a in dead:
            del self.foreign_devices[a]
        return list(self.foreign_devices.values())

    def register_foreign_device(self, addr: NodeAddr, ttl_s: int) -> bool:
        """Add or refresh; False when the table is at capacity."""
        self.live_foreign_devices()
        if addr not in self.foreign_devices and len(self.foreign_devices) >= self.fd_table_cap:
            return False
        self.foreign_devices[addr] = ForeignDeviceEntry(addr, self.now_us + ttl_s * US)
        return True

    # -- event loop -------------------------------------------------------------

    def _tap(
        self,
        t_us: int,
        segment: int,
        src: NodeAddr,
        dst: Optional[NodeAddr],
        payload: bytes,
        verdict: str,
    ) -> None:
        if self.tap is not None:
            self.tap(TapRecord(t_us, segment, src, dst, payload, verdict))

    def step(self, until_s: float) -> list[Delivery]:
        """Process every event due at or before ``until_s``; advance the clock."""
        until_us = int(round(until_s * US))
        if until_us < self.now_us:
            raise ValueError("time cannot go backwards")
        delivered: list[Delivery] = []
        while self._heap and self._heap[0][0] <= until_us:
            due_us, _, item = heapq.heappop(self._heap)
            self.now_us = due_us
            if isinstance(item, TimerHandle):
                if not item.cancelled:
                    item.fn()
                continue
            assert isinstance(item, Delivery)
            # recipient may have detached between send and delivery
            handler = self.segments[item.segment].nodes.get(item.recipient)
            if handler is not None:
                handler(item)
                delivered.append(item)
        self.now_us = until_us
        return delivered


class BacnetRouter:
    """Joins the IP and field segments; owns the BBMD duties.

    IP side speaks Annex J frames; the field side carries bare NPDU bytes.
    Routing semantics: hop count decrements per traversal, the source
    specifier is stamped once at the first router, the destination specifier
    is consumed on delivery to its final network, and a global broadcast
    (dnet 0xFFFF) keeps its destination so it floods every segment.
    """

    def __init__(self, fabric: Fabric, ip_addr: NodeAddr, field_addr: NodeAddr):
        self.fabric = fabric
        self.ip_addr = ip_addr
        self.field_addr = field_addr
        self.ip_net = ip_addr.network
        self.field_net = field_addr.network
        fabric.ip_network = self.ip_net
        fabric.attach(ip_addr, self._on_ip)
        fabric.attach(field_addr, self._on_field)
        fabric.fd_forward_transform = self._wrap_for_foreign_device

    def _wrap_for_foreign_device(self, payload: bytes, src: NodeAddr) -> Optional[bytes]:
        try:
            frame = bvll.decode_frame(payload)
        except DecodeError:
            return None
        if isinstance(frame, bvll.OriginalBroadcast):
            return bvll.encode_frame(
                bvll.ForwardedNpdu(src.ip_str, src.port, frame.npdu, frame.apdu)
            )
        return None

    # -- IP side ----------------------------------------------------------------

    def _on_ip(self, delivery: Delivery) -> None:
        try:
            frame = bvll.decode_frame(delivery.payload)
        except DecodeError as exc:
            log.debug("router: undecodable IP frame from %s: %s", delivery.src.label(), exc)
            return
        if isinstance(frame, bvll.RegisterForeignDevice):
            ok = self.fabric.register_foreign_device(delivery.src, frame.ttl)
            code = bvll.RESULT_SUCCESS if ok else bvll.RESULT_REGISTER_FD_NAK
            self.fabric.send(
                self.ip_addr, delivery.src, bvll.encode_frame(bvll.ResultFrame(code))
            )
            return
        if isinstance(frame, (bvll.OriginalUnicast, bvll.OriginalBroadcast)):
            self._route_toward_field(frame.npdu, frame.apdu, delivery.src)
            return
        if isinstance(frame, bvll.DistributeBroadcast):
            # rebroadcast on the LAN on the foreign device's behalf, then route
            wrapped = bvll.encode_frame(
                bvll.ForwardedNpdu(
                    delivery.src.ip_str, delivery.src.port, frame.npdu, frame.apdu
                )
            )
            self.fabric.send(self.ip_addr, None, wrapped)
            self._route_toward_field(frame.npdu, frame.apdu, delivery.src)
            return
        # Result and Forwarded-NPDU arriving at the router need no action

    def _route_toward_field(self, npdu, apdu, origin: NodeAddr) -> None:
        if npdu.dnet is None or npdu.dnet not in (self.field_net, GLOBAL_BROADCAST_DNET):
            if npdu.dnet is not None:
                self.fabric.drop_count += 1
                log.debug("router: unroutable dnet %s", npdu.dnet)
            return
        if npdu.hop_count <= 1:
            self.fabric.drop_count += 1
            log.debug("router: hop count exhausted toward field")
            return
        routed = npdu.decrement_hop()
        if routed.snet is None:
            # stamp the originator so field devices can address their replies
            routed = routed.with_source(origin.network, origin.mac)
        if npdu.dnet == GLOBAL_BROADCAST_DNET:
            raw = encode_npdu(routed, encode_apdu(apdu))
            self.fabric.send(self.field_addr, None, raw)
            return
        dadr = routed.dadr
        routed = routed.without_destination()
        raw = encode_npdu(routed, encode_apdu(apdu))
        if dadr is None:
            self.fabric.send(self.field_addr, None, raw)
        else:
            self.fabric.send(self.field_addr, NodeAddr(self.field_net, bytes(dadr)), raw)

    # -- field side ---------------------------------------------------------------

    def _on_field(self, delivery: Delivery) -> None:
        try:
            npdu, apdu_bytes = decode_npdu(delivery.payload)
        except DecodeError as exc:
            log.debug("router: undecodable field NPDU from %s: %s", delivery.src.label(), exc)
            return
        if npdu.dnet is None or npdu.dnet not in (self.ip_net, GLOBAL_BROADCAST_DNET):
            return  # local field traffic, nothing to route
        if npdu.hop_count <= 1:
            self.fabric.drop_count += 1
            log.debug("router: hop count exhausted toward IP")
            return
        routed = npdu.decrement_hop()
        if routed.snet is None:
            routed = routed.with_source(self.field_net, delivery.src.mac)
        try:
            apdu = decode_apdu(apdu_bytes)
        except DecodeError as exc:
            log.debug("router: undecodable APDU from field: %s", exc)
            return
        if npdu.dnet == GLOBAL_BROADCAST_DNET:
            frame = bvll.OriginalBroadcast(routed, apdu)
            self.fabric.send(self.ip_addr, None, bvll.encode_frame(frame))
            return
        dadr = routed.dadr
        routed = routed.without_destination()
        if dadr is None:
            self.fabric.send(
                self.ip_addr, None, bvll.encode_frame(bvll.OriginalBroadcast(routed, apdu))
            )
            return
        if len(dadr) != 6:
            log.debug("router: dadr %s is not a B/IP address", dadr.hex())
            return
        self.fabric.send(
            self.ip_addr,
            NodeAddr(self.ip_net, bytes(dadr)),
            bvll.encode_frame(bvll.OriginalUnicast(routed, apdu)),
        )
