"""Supervisory workstation on the IP segment.

Discovers devices with a global Who-Is, polls monitored points on a trend
interval with timeout+retry (timeouts become ``missing`` records, the
DoS-visible artifact), dispatches schedule-driven setpoints at priority 16,
evaluates high-limit alarms with a deadband, and keeps an audit row for every
write it issues, tagged by actor.

Poll instants carry per-cycle random jitter.  A fixed phase would alias
against periodic attack floods whose period shares a factor with the trend
interval, turning partial data loss into all-or-nothing; jitter keeps the
loss fraction proportional to the flood duty cycle.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .bacnet import apdu as ap
from .bacnet import bvll
from .bacnet.errors import DecodeError
from .bacnet.npdu import DEFAULT_HOP_COUNT, GLOBAL_BROADCAST_DNET, Npdu
from .bacnet.objects import PROP_PRESENT_VALUE, AppTag, AppValue, ObjectId
from .control import DailySchedule, ZoneSetpoints
from .devices import FieldTopology
from .netfabric import Delivery, Fabric, NodeAddr

log = logging.getLogger(__name__)

QUALITY_OK = "ok"
QUALITY_MISSING = "missing"
QUALITY_STALE = "stale"  # reserved for UI-side freshness marking

ACTORS = ("operator", "supervisor", "attacker")


class UnknownPointError(ValueError):
    """Write or poll referenced a point with no configured device binding."""


@dataclass(frozen=True, slots=True)
class PointId:
    """``<device>.<object-type>:<instance>``, e.g. ``ahu.analog-value:1``."""

    device: str
    oid: ObjectId

    @classmethod
    def parse(cls, text: str) -> "PointId":
        device, sep, obj = text.partition(".")
        if not sep or not device or not obj:
            raise UnknownPointError(f"bad point id: {text!r}")
        try:
            oid = ObjectId.parse(obj)
        except ValueError as exc:
            raise UnknownPointError(f"bad point id {text!r}: {exc}") from None
        return cls(device, oid)

    def __str__(self) -> str:
        return f"{self.device}.{self.oid}"


@dataclass(frozen=True, slots=True)
class DeviceBinding:
    """Engineered address of one field controller behind the router."""

    name: str
    instance: int
    station: int


def default_bindings(topology: FieldTopology = FieldTopology()) -> dict[str, DeviceBinding]:
    bindings = {"ahu": DeviceBinding("ahu", topology.ahu_instance, topology.ahu_station)}
    for i, (station, instance) in enumerate(
        zip(topology.vav_stations, topology.vav_instances), start=1
    ):
        bindings[f"vav{i}"] = DeviceBinding(f"vav{i}", instance, station)
    bindings["chiller"] = DeviceBinding(
        "chiller", topology.chiller_instance, topology.chiller_station
    )
    return bindings


def default_monitored_points(n_vavs: int = 5) -> tuple[PointId, ...]:
    points = []
    for i in range(1, n_vavs + 1):
        points.append(PointId.parse(f"vav{i}.analog-input:1"))  # zone temp
        points.append(PointId.parse(f"vav{i}.analog-input:2"))  # airflow
    points += [
        PointId.parse("ahu.analog-input:1"),    # supply air temp
        PointId.parse("ahu.analog-value:1"),    # SAT setpoint
        PointId.parse("ahu.analog-output:1"),   # cooling valve
        PointId.parse("ahu.analog-output:2"),   # OA damper
        PointId.parse("chiller.analog-input:1"),
        PointId.parse("chiller.analog-value:1"),
    ]
    return tuple(points)


@dataclass(frozen=True, slots=True)
class DispatchRule:
    point: PointId
    occupied_value: float
    unoccupied_value: float


def default_dispatch_rules(
    setpoints: ZoneSetpoints = ZoneSetpoints(),
    sat_setpoint: float = 12.78,
    chw_setpoint: float = 6.67,
    n_vavs: int = 5,
) -> tuple[DispatchRule, ...]:
    rules = []
    for i in range(1, n_vavs + 1):
        rules.append(DispatchRule(PointId.parse(f"vav{i}.analog-value:1"),
                                  setpoints.cool_occ, setpoints.cool_unocc))
        rules.append(DispatchRule(PointId.parse(f"vav{i}.analog-value:2"),
                                  setpoints.heat_occ, setpoints.heat_unocc))
    rules.append(DispatchRule(PointId.parse("ahu.analog-value:1"),
                              sat_setpoint, sat_setpoint))
    rules.append(DispatchRule(PointId.parse("chiller.analog-value:1"),
                              chw_setpoint, chw_setpoint))
    return tuple(rules)


@dataclass(frozen=True, slots=True)
class AlarmRule:
    rule_id: str
    point: PointId
    high_limit: float
    deadband: float = 0.5
    min_duration_s: float = 300.0


def default_alarm_rules(n_vavs: int = 5, high_limit: float = 26.5) -> tuple[AlarmRule, ...]:
    return tuple(
        AlarmRule(f"zone{i}-high-temp", PointId.parse(f"vav{i}.analog-input:1"), high_limit)
        for i in range(1, n_vavs + 1)
    )


@dataclass(frozen=True, slots=True)
class TrendRecord:
    sim_time_s: float  # nominal cycle time, so runs stay row-aligned
    point: str
    value: Optional[float]
    quality: str

    def __post_init__(self) -> None:
        assert (self.value is None) == (self.quality == QUALITY_MISSING)


@dataclass(slots=True)
class AlarmEvent:
    rule_id: str
    point: str
    onset_s: float
    cleared_s: Optional[float]
    peak: float


@dataclass(frozen=True, slots=True)
class AuditRecord:
    t_s: float
    actor: str
    point: str
    value: Union[float, bool]
    priority: int


@dataclass(slots=True)
class DeviceEntry:
    device_id: ObjectId
    dnet: Optional[int]
    dadr: Optional[bytes]
    source: NodeAddr
    max_apdu: int
    last_seen: float


@dataclass(slots=True)
class WriteTicket:
    point: str
    status: str = "pending"  # pending | ok | error | timeout
    error: Optional[tuple[int, int]] = None


class _AlarmTracker:
    def __init__(self, rule: AlarmRule):
        self.rule = rule
        self.over_since: Optional[float] = None
        self.peak = 0.0
        self.open_event: Optional[AlarmEvent] = None

    def observe(self, t: float, value: float) -> list[tuple[AlarmEvent, str]]:
        r = self.rule
        if self.open_event is not None:
            ev = self.open_event
            ev.peak = max(ev.peak, value)
            if value < r.high_limit - r.deadband:  # must leave by the deadband
                ev.cleared_s = t
                self.open_event = None
                self.over_since = None
                return [(ev, "cleared")]
            return []
        if value > r.high_limit:
            if self.over_since is None:
                self.over_since, self.peak = t, value
            else:
                self.peak = max(self.peak, value)
            if t - self.over_since >= r.min_duration_s:
                ev = AlarmEvent(r.rule_id, str(r.point), self.over_since, None, self.peak)
                self.open_event = ev
                return [(ev, "opened")]
        else:
            self.over_since = None
        return []


class AlarmEngine:
    """High-limit rules with sustain duration and clearing hysteresis."""

    def __init__(self, rules: tuple[AlarmRule, ...]):
        self.events: list[AlarmEvent] = []
        self._by_point: dict[str, list[_AlarmTracker]] = defaultdict(list)
        for rule in rules:
            self._by_point[str(rule.point)].append(_AlarmTracker(rule))

    def observe(self, point: str, t: float, value: float) -> list[tuple[AlarmEvent, str]]:
        changes: list[tuple[AlarmEvent, str]] = []
        for tracker in self._by_point.get(point, ()):
            for ev, what in tracker.observe(t, value):
                if what == "opened":
                    self.events.append(ev)
                changes.append((ev, what))
        return changes

    def open_events(self) -> list[AlarmEvent]:
        return [ev for ev in self.events if ev.cleared_s is None]


class _Pending:
    __slots__ = ("on_reply", "on_timeout", "timer")

    def __init__(self, on_reply, on_timeout, timer):
        self.on_reply = on_reply
        self.on_timeout = on_timeout
        self.timer = timer


class BasServer:
    """Single supervisory node; all handlers run on the simulation thread."""

    def __init__(
        self,
        fabric: Fabric,
        addr: NodeAddr,
        router_addr: NodeAddr,
        schedule: DailySchedule,
        field_net: int = 2001,
        bindings: Optional[dict[str, DeviceBinding]] = None,
        monitored: Optional[tuple[PointId, ...]] = None,
        dispatch_rules: Optional[tuple[DispatchRule, ...]] = None,
        alarm_rules: Optional[tuple[AlarmRule, ...]] = None,
        poll_interval_s: float = 60.0,
        poll_timeout_s: float = 3.0,
        poll_phase_s: float = 0.5,
        poll_jitter_s: float = 30.0,
        dispatch_period_s: float = 300.0,
    ):
        self.fabric = fabric
        self.addr = addr
        self.router_addr = router_addr
        self.schedule = schedule
        self.field_net = field_net
        self.bindings = default_bindings() if bindings is None else bindings
        self.monitored = tuple(sorted(
            default_monitored_points() if monitored is None else monitored, key=str))
        self.dispatch_rules = (default_dispatch_rules() if dispatch_rules is None
                               else dispatch_rules)
        self.alarm_engine = AlarmEngine(default_alarm_rules() if alarm_rules is None
                                        else alarm_rules)
        for pid in list(self.monitored) + [r.point for r in self.dispatch_rules]:
            if pid.device not in self.bindings:
                raise UnknownPointError(f"no binding for device {pid.device!r}")
        self.poll_interval_s = poll_interval_s
        self.poll_timeout_s = poll_timeout_s
        self.poll_phase_s = poll_phase_s
        self.poll_jitter_s = poll_jitter_s
        self.dispatch_period_s = dispatch_period_s

        self.devices: dict[int, DeviceEntry] = {}
        self.trends: dict[str, list[TrendRecord]] = {str(p): [] for p in self.monitored}
        self.latest: dict[str, TrendRecord] = {}
        self.audit: list[AuditRecord] = []
        self.poll_error_count = 0  # error replies / non-Real payloads on polls
        self.write_failure_count = 0
        self.stray_frame_count = 0

        self.trend_sink: Optional[Callable[[list[TrendRecord]], None]] = None
        self.audit_sink: Optional[Callable[[AuditRecord], None]] = None
        self.alarm_sink: Optional[Callable[[AlarmEvent, str], None]] = None

        self._phase_rng = fabric.stream("poll-phase")
        self._pending: dict[int, _Pending] = {}
        self._invoke_counter = 0
        self._duration_s = float("inf")
        fabric.attach(addr, self._on_frame)

    # -- lifecycle ---------------------------------------------------------------

    def start(self, duration_s: float) -> None:
        """Register discovery, dispatch, and poll timers for the whole run."""
        self._duration_s = duration_s
        self.fabric.call_at(self.fabric.now_s, self.discover)
        self._schedule_dispatch(0)
        self._schedule_poll(0)

    def point_map(self) -> dict:
        """Engineered addressing published for UIs and the CLI."""
        return {
            "devices": {
                b.name: {"instance": b.instance, "network": self.field_net,
                         "station": b.station}
                for b in sorted(self.bindings.values(), key=lambda b: b.name)
            },
            "points": [str(p) for p in self.monitored],
        }

    # -- discovery ---------------------------------------------------------------

    def discover(self) -> None:
        npdu = Npdu(dnet=GLOBAL_BROADCAST_DNET, hop_count=DEFAULT_HOP_COUNT)
        frame = bvll.OriginalBroadcast(npdu, ap.build_who_is())
        self.fabric.send(self.addr, None, bvll.encode_frame(frame))

    def device_entries(self) -> list[DeviceEntry]:
        return [self.devices[k] for k in sorted(self.devices)]

    def _record_i_am(self, body: ap.IAmRequest, npdu: Npdu, delivery: Delivery) -> None:
        self.devices[body.device_id.instance] = DeviceEntry(
            device_id=body.device_id,
            dnet=npdu.snet,
            dadr=npdu.sadr,
            source=delivery.src,
            max_apdu=body.max_apdu,
            last_seen=self.fabric.now_s,
        )

    # -- frame handling ----------------------------------------------------------

    def _on_frame(self, delivery: Delivery) -> None:
        try:
            frame = bvll.decode_frame(delivery.payload)
        except DecodeError:
            self.stray_frame_count += 1
            return
        if not isinstance(frame, (bvll.OriginalUnicast, bvll.OriginalBroadcast,
                                  bvll.ForwardedNpdu)):
            return
        npdu, apdu = frame.npdu, frame.apdu
        if npdu.dnet is not None and npdu.dnet != GLOBAL_BROADCAST_DNET:
            return
        if isinstance(apdu, ap.UnconfirmedRequest):
            if apdu.service == ap.SERVICE_I_AM and isinstance(apdu.body, ap.IAmRequest):
                self._record_i_am(apdu.body, npdu, delivery)
            return
        invoke = getattr(apdu, "invoke_id", None)
        pending = self._pending.pop(invoke, None)
        if pending is None:
            self.stray_frame_count += 1
            return
        pending.timer.cancel()
        pending.on_reply(apdu)

    def _next_invoke(self) -> int:
        for _ in range(256):
            i = self._invoke_counter
            self._invoke_counter = (self._invoke_counter + 1) % 256
            if i not in self._pending:
                return i
        raise RuntimeError("invoke-id space exhausted")

    def _send_confirmed(self, binding: DeviceBinding, request: ap.ConfirmedRequest,
                        on_reply, on_timeout) -> None:
        npdu = Npdu(
            expects_reply=True,
            dnet=self.field_net,
            dadr=NodeAddr.station(self.field_net, binding.station).mac,
            hop_count=DEFAULT_HOP_COUNT,
        )
        frame = bvll.OriginalUnicast(npdu, request)
        timer = self.fabric.call_later(
            self.poll_timeout_s, lambda: self._on_timeout(request.invoke_id))
        self._pending[request.invoke_id] = _Pending(on_reply, on_timeout, timer)
        self.fabric.send(self.addr, self.router_addr, bvll.encode_frame(frame))

    def _on_timeout(self, invoke_id: int) -> None:
        pending = self._pending.pop(invoke_id, None)
        if pending is not None:
            pending.on_timeout()

    # -- polling ---------------------------------------------------------------

    def _schedule_poll(self, k: int) -> None:
        nominal = k * self.poll_interval_s
        if nominal >= self._duration_s:
            return
        t = nominal + self.poll_phase_s + self._phase_rng.uniform(0.0, self.poll_jitter_s)

        def fire() -> None:
            self._run_poll_cycle(k)
            self._schedule_poll(k + 1)

        self.fabric.call_at(t, fire)

    def _run_poll_cycle(self, k: int) -> None:
        nominal = k * self.poll_interval_s
        cycle: dict[str, TrendRecord] = {}
        for pid in self.monitored:
            self._poll_point(pid, nominal, cycle, attempt=1)

    def _poll_point(self, pid: PointId, nominal: float,
                    cycle: dict[str, TrendRecord], attempt: int) -> None:
        request = ap.build_read_property(pid.oid, PROP_PRESENT_VALUE,
                                         invoke_id=self._next_invoke())

        def on_reply(reply: ap.Apdu) -> None:
            if isinstance(reply, ap.ComplexAck) and isinstance(reply.body, ap.ReadPropertyAck):
                value = reply.body.value
                if value.kind is AppTag.REAL:
                    self._resolve_poll(pid, nominal, cycle, float(value.value), QUALITY_OK)
                    return
            self.poll_error_count += 1
            self._resolve_poll(pid, nominal, cycle, None, QUALITY_MISSING)

        def on_timeout() -> None:
            if attempt == 1:
                self._poll_point(pid, nominal, cycle, attempt=2)
            else:
                self._resolve_poll(pid, nominal, cycle, None, QUALITY_MISSING)

        self._send_confirmed(self.bindings[pid.device], request, on_reply, on_timeout)

    def _resolve_poll(self, pid: PointId, nominal: float, cycle: dict[str, TrendRecord],
                      value: Optional[float], quality: str) -> None:
        cycle[str(pid)] = TrendRecord(nominal, str(pid), value, quality)
        if len(cycle) == len(self.monitored):
            self._finish_cycle(nominal, cycle)

    def _finish_cycle(self, nominal: float, cycle: dict[str, TrendRecord]) -> None:
        records = [cycle[key] for key in sorted(cycle)]
        for rec in records:
            self.trends[rec.point].append(rec)
            if rec.quality == QUALITY_OK:
                self.latest[rec.point] = rec
        if self.trend_sink is not None:
            self.trend_sink(records)
        for rec in records:
            if rec.quality != QUALITY_OK:
                continue
            for event, what in self.alarm_engine.observe(rec.point, nominal, rec.value):
                if self.alarm_sink is not None:
                    self.alarm_sink(event, what)

    # -- writes ---------------------------------------------------------------

    def write_point(self, point: Union[str, PointId], value: Union[float, bool, AppValue],
                    priority: int = 16, actor: str = "operator") -> WriteTicket:
        assert actor in ACTORS
        pid = PointId.parse(point) if isinstance(point, str) else point
        binding = self.bindings.get(pid.device)
        if binding is None:
            raise UnknownPointError(f"no binding for device {pid.device!r}")
        if isinstance(value, AppValue):
            app_value = value
        elif isinstance(value, bool):
            app_value = AppValue.boolean(value)
        else:
            app_value = AppValue.real(float(value))
        request = ap.build_write_property(
            pid.oid, PROP_PRESENT_VALUE, app_value,
            invoke_id=self._next_invoke(), priority=priority)
        ticket = WriteTicket(str(pid))

        def on_reply(reply: ap.Apdu) -> None:
            if isinstance(reply, ap.SimpleAck):
                ticket.status = "ok"
                return
            ticket.status = "error"
            if isinstance(reply, ap.ErrorPdu):
                ticket.error = (reply.error_class, reply.error_code)
            self.write_failure_count += 1

        def on_timeout() -> None:
            ticket.status = "timeout"
            self.write_failure_count += 1

        self._send_confirmed(binding, request, on_reply, on_timeout)
        record = AuditRecord(self.fabric.now_s, actor, str(pid), app_value.value, priority)
        self.audit.append(record)
        if self.audit_sink is not None:
            self.audit_sink(record)
        return ticket

    # -- dispatch ---------------------------------------------------------------

    def _schedule_dispatch(self, m: int) -> None:
        t = m * self.dispatch_period_s
        if t >= self._duration_s:
            return

        def fire() -> None:
            self.dispatch_setpoints()
            self._schedule_dispatch(m + 1)

        self.fabric.call_at(t, fire)

    def dispatch_setpoints(self) -> list[WriteTicket]:
        """Push occupied/unoccupied values to every ruled point, audited.

        A timed-out write (device rebooting) is not retried here; the next
        period repeats it, which is also what ends an injected setpoint."""
        occupied = self.schedule.is_occupied(self.fabric.now_s)
        return [
            self.write_point(rule.point,
                             rule.occupied_value if occupied else rule.unoccupied_value,
                             priority=16, actor="supervisor")
            for rule in self.dispatch_rules
        ]

    # -- summaries ---------------------------------------------------------------

    def trend_summary(self) -> dict:
        """Per-point stats plus the alarm list, for the end-of-run summary."""
        points = {}
        for point, records in self.trends.items():
            values = [r.value for r in records if r.value is not None]
            points[point] = {
                "rows": len(records),
                "missing": sum(1 for r in records if r.quality == QUALITY_MISSING),
                "min": min(values) if values else None,
                "max": max(values) if values else None,
                "mean": sum(values) / len(values) if values else None,
            }
        return {
            "points": points,
            "alarms": [
                {"rule": ev.rule_id, "point": ev.point, "onset_s": ev.onset_s,
                 "cleared_s": ev.cleared_s, "peak": ev.peak}
                for ev in self.alarm_engine.events
            ],
            "poll_errors": self.poll_error_count,
            "write_failures": self.write_failure_count,
        }
