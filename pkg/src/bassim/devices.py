"""Virtual BACnet field controllers: five VAV boxes, one AHU, one chiller.

Each device owns a point table (inputs plus commandable outputs with 16-slot
priority arrays), answers the implemented services, and runs a simplified
single-maximum control sequence every loop period.  ReinitializeDevice puts
a device into a soft reboot: the first request is acknowledged, then the
device stays silent and its loops stop while its last actuator commands
latch in the plant.  Further reinits received during the reboot extend it
silently, which is what keeps a flooded device permanently down.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .bacnet import apdu as ap
from .bacnet.errors import DecodeError
from .bacnet.npdu import DEFAULT_HOP_COUNT, GLOBAL_BROADCAST_DNET, Npdu, decode_npdu, encode_npdu
from .bacnet.objects import (
    PROP_OBJECT_NAME,
    PROP_PRESENT_VALUE,
    PROP_UNITS,
    AppTag,
    AppValue,
    ObjectId,
    ObjectType,
)
from .control import DailySchedule, PiLoop, ZoneSetpoints
from .netfabric import Delivery, Fabric, NodeAddr
from .plant import PlantCommands, PlantState, SensorNoise

log = logging.getLogger(__name__)

UNITS_DEG_C = 62
UNITS_KG_PER_S = 186
UNITS_PERCENT = 98
UNITS_NO_UNITS = 95

PRIORITY_SLOTS = 16


@dataclass
class Point:
    oid: ObjectId
    name: str
    value: AppValue
    units: int = UNITS_NO_UNITS
    commandable: bool = False
    priority_array: list[Optional[AppValue]] = field(
        default_factory=lambda: [None] * PRIORITY_SLOTS
    )
    relinquish_default: Optional[AppValue] = None

    def effective(self) -> AppValue:
        if not self.commandable:
            return self.value
        for slot in self.priority_array:
            if slot is not None:
                return slot
        return self.relinquish_default if self.relinquish_default is not None else self.value

    def effective_float(self) -> float:
        v = self.effective()
        if v.kind is AppTag.BOOLEAN or v.kind is AppTag.ENUMERATED:
            return float(bool(v.value))
        return float(v.value)  # type: ignore[arg-type]


class PlantAdapter:
    """Actuator latch and noisy sensor front-end between devices and plant.

    Devices write their commands here; the simulation loop turns the latched
    values into PlantCommands each physics step.  A rebooting device simply
    stops updating its entries, so its last commands hold automatically.
    """

    def __init__(self, noise: Optional[SensorNoise], n_zones: int = 5):
        self.noise = noise
        self.n_zones = n_zones
        self.state: Optional[PlantState] = None
        self.airflow_sp = [0.0] * n_zones
        self.reheat = [0.0] * n_zones
        self.valve_cool = 0.0
        self.fan_on = False
        self.oa_frac = 0.0
        self.chw_setpoint = 6.67

    def commands(self) -> PlantCommands:
        return PlantCommands(
            airflow_sp=tuple(self.airflow_sp),
            reheat=tuple(self.reheat),
            valve_cool=self.valve_cool,
            fan_on=self.fan_on,
            oa_frac=self.oa_frac,
            chw_setpoint=self.chw_setpoint,
        )

    def _read(self, label: str, value: float, t_us: int) -> float:
        if self.noise is None:
            return value
        return self.noise.read(label, value, t_us)

    def zone_temp(self, i: int, t_us: int) -> float:
        return self._read(f"zone{i}.t", self.state.t_zone[i], t_us)

    def zone_flow(self, i: int, t_us: int) -> float:
        return self._read(f"zone{i}.flow", self.state.m_dot[i], t_us)

    def sat(self, t_us: int) -> float:
        return self._read("ahu.t_sa", self.state.t_sa, t_us)

    def chw_temp(self, t_us: int) -> float:
        return self._read("chiller.t_chw", self.state.t_chw, t_us)


class ControllerCore:
    """Protocol state machine shared by every field controller."""

    def __init__(
        self,
        name: str,
        device_instance: int,
        t_reboot: float = 10.0,
        loop_period: float = 5.0,
        vendor_id: int = 15,
    ):
        self.name = name
        self.device_id = ObjectId(ObjectType.DEVICE, device_instance)
        self.t_reboot = t_reboot
        self.loop_period = loop_period
        self.vendor_id = vendor_id
        self.points: dict[ObjectId, Point] = {}
        self.reboot_until: Optional[float] = None
        self.reboot_count = 0

    def add_point(self, point: Point) -> Point:
        self.points[point.oid] = point
        return point

    def point(self, oid: ObjectId) -> Point:
        return self.points[oid]

    def rebooting(self, now: float) -> bool:
        return self.reboot_until is not None and now < self.reboot_until

    def handle_request(self, request: ap.Apdu, now: float) -> Optional[ap.Apdu]:
        """Apply one request; None means stay silent (reboot or not addressed)."""
        if self.rebooting(now):
            if (
                isinstance(request, ap.ConfirmedRequest)
                and request.service == ap.SERVICE_REINITIALIZE_DEVICE
            ):
                # repeated soft reboot: the window extends, still no answer
                self.reboot_until = now + self.t_reboot
                self.reboot_count += 1
            return None
        if isinstance(request, ap.UnconfirmedRequest):
            if request.service == ap.SERVICE_WHO_IS and isinstance(request.body, ap.WhoIsRequest):
                rng = request.body
                if rng.low is not None and not rng.low <= self.device_id.instance <= rng.high:
                    return None
                return ap.build_i_am(self.device_id, vendor_id=self.vendor_id)
            return None  # unconfirmed services carry no error path
        if not isinstance(request, ap.ConfirmedRequest):
            return None
        if request.service == ap.SERVICE_READ_PROPERTY:
            return self._read_property(request)
        if request.service == ap.SERVICE_WRITE_PROPERTY:
            return self._write_property(request)
        if request.service == ap.SERVICE_REINITIALIZE_DEVICE:
            self.reboot_until = now + self.t_reboot
            self.reboot_count += 1
            return ap.build_simple_ack(request)  # ack leaves before the silence starts
        return ap.build_reject(request)

    def _read_property(self, request: ap.ConfirmedRequest) -> ap.Apdu:
        body = request.body
        assert isinstance(body, ap.ReadPropertyRequest)
        if body.oid == self.device_id and body.prop == PROP_OBJECT_NAME:
            return ap.build_read_ack(request, AppValue.char_string(self.name))
        point = self.points.get(body.oid)
        if point is None:
            return ap.build_error(
                request, ap.ERROR_CLASS_OBJECT, ap.ERROR_CODE_UNKNOWN_OBJECT
            )
        if body.prop == PROP_PRESENT_VALUE:
            return ap.build_read_ack(request, point.effective())
        if body.prop == PROP_OBJECT_NAME:
            return ap.build_read_ack(request, AppValue.char_string(point.name))
        if body.prop == PROP_UNITS:
            return ap.build_read_ack(request, AppValue.enumerated(point.units))
        return ap.build_error(
            request, ap.ERROR_CLASS_PROPERTY, ap.ERROR_CODE_UNKNOWN_PROPERTY
        )

    def _write_property(self, request: ap.ConfirmedRequest) -> ap.Apdu:
        body = request.body
        assert isinstance(body, ap.WritePropertyRequest)
        point = self.points.get(body.oid)
        if point is None:
            return ap.build_error(
                request, ap.ERROR_CLASS_OBJECT, ap.ERROR_CODE_UNKNOWN_OBJECT
            )
        if body.prop != PROP_PRESENT_VALUE:
            return ap.build_error(
                request, ap.ERROR_CLASS_PROPERTY, ap.ERROR_CODE_UNKNOWN_PROPERTY
            )
        if not point.commandable:
            return ap.build_error(
                request, ap.ERROR_CLASS_PROPERTY, ap.ERROR_CODE_WRITE_ACCESS_DENIED
            )
        slot = (body.priority or 16) - 1
        if body.value.kind is AppTag.NULL:
            point.priority_array[slot] = None  # relinquish
            return ap.build_simple_ack(request)
        expected = (point.relinquish_default or point.value).kind
        if body.value.kind is not expected:
            return ap.build_error(
                request, ap.ERROR_CLASS_PROPERTY, ap.ERROR_CODE_INVALID_DATATYPE
            )
        point.priority_array[slot] = body.value
        return ap.build_simple_ack(request)


@dataclass(frozen=True, slots=True)
class VavConfig:
    zone_index: int
    v_min: float = 0.08
    v_cool_max: float = 1.5
    setpoints: ZoneSetpoints = ZoneSetpoints()
    kp: float = 0.3
    ki: float = 0.005


@dataclass(frozen=True, slots=True)
class AhuConfig:
    sat_default: float = 12.78
    oa_frac_min: float = 0.3
    kp: float = 0.1
    ki: float = 0.01


@dataclass(frozen=True, slots=True)
class ChillerConfig:
    chw_default: float = 6.67


def _ai(instance: int, name: str, units: int) -> Point:
    return Point(ObjectId(ObjectType.ANALOG_INPUT, instance), name,
                 AppValue.real(0.0), units)


def _commandable(otype: ObjectType, instance: int, name: str, units: int,
                 default: AppValue) -> Point:
    return Point(ObjectId(otype, instance), name, default, units,
                 commandable=True, relinquish_default=default)


class FieldDevice:
    """Network glue: NPDU handling, reply routing, reboot timers, loop ticks."""

    def __init__(
        self,
        fabric: Fabric,
        core: ControllerCore,
        addr: NodeAddr,
        router_station: int,
        schedule: DailySchedule,
        plant: PlantAdapter,
    ):
        self.fabric = fabric
        self.core = core
        self.addr = addr
        self.router = NodeAddr.station(addr.network, router_station)
        self.schedule = schedule
        self.plant = plant
        fabric.attach(addr, self._on_delivery)

    def start(self, first_tick_s: float) -> None:
        self.fabric.call_at(first_tick_s, self._tick)

    # -- networking -------------------------------------------------------------

    def _on_delivery(self, delivery: Delivery) -> None:
        try:
            npdu, apdu_bytes = decode_npdu(delivery.payload)
            request = ap.decode_apdu(apdu_bytes)
        except DecodeError as exc:
            log.debug("%s: ignoring malformed frame: %s", self.core.name, exc)
            return
        if npdu.dnet is not None and npdu.dnet != GLOBAL_BROADCAST_DNET:
            return  # in transit to another network, not ours to answer
        before = self.core.reboot_until
        response = self.core.handle_request(request, self.fabric.now_s)
        if self.core.reboot_until is not None and self.core.reboot_until != before:
            self._schedule_reboot_completion()
        if response is None:
            return
        if isinstance(response, ap.UnconfirmedRequest):
            self._broadcast(response)
            return
        reply_npdu = Npdu()
        if npdu.snet is not None:
            reply_npdu = Npdu(dnet=npdu.snet, dadr=npdu.sadr, hop_count=DEFAULT_HOP_COUNT)
        raw = encode_npdu(reply_npdu, ap.encode_apdu(response))
        dest = self.router if npdu.snet is not None else delivery.src
        self.fabric.send(self.addr, dest, raw)

    def _broadcast(self, apdu: ap.Apdu) -> None:
        npdu = Npdu(dnet=GLOBAL_BROADCAST_DNET, hop_count=DEFAULT_HOP_COUNT)
        self.fabric.send(self.addr, None, encode_npdu(npdu, ap.encode_apdu(apdu)))

    def _schedule_reboot_completion(self) -> None:
        def completed() -> None:
            # a later reinit may have extended the window; only the timer that
            # matches the final end time announces the device back
            ru = self.core.reboot_until
            if ru is None or self.fabric.now_us < int(round(ru * 1_000_000)):
                return
            self.core.reboot_until = None
            self._broadcast(ap.build_i_am(self.core.device_id, self.core.vendor_id))

        self.fabric.call_at(self.core.reboot_until, completed)

    # -- control loop -------------------------------------------------------------

    def _tick(self) -> None:
        now = self.fabric.now_s
        self.fabric.call_later(self.core.loop_period, self._tick)
        if self.core.rebooting(now):
            return  # loops halt; last plant commands stay latched
        self.loop_step(now, self.fabric.now_us)

    def loop_step(self, now: float, t_us: int) -> None:  # pragma: no cover
        raise NotImplementedError


OID_ZN_T = ObjectId(ObjectType.ANALOG_INPUT, 1)
OID_ZN_FLOW = ObjectId(ObjectType.ANALOG_INPUT, 2)
OID_ZN_CLGSP = ObjectId(ObjectType.ANALOG_VALUE, 1)
OID_ZN_HTGSP = ObjectId(ObjectType.ANALOG_VALUE, 2)
OID_FLOW_SP = ObjectId(ObjectType.ANALOG_OUTPUT, 1)
OID_RH_POS = ObjectId(ObjectType.ANALOG_OUTPUT, 2)

OID_SAT = ObjectId(ObjectType.ANALOG_INPUT, 1)
OID_SAT_SP = ObjectId(ObjectType.ANALOG_VALUE, 1)
OID_CLG_VLV = ObjectId(ObjectType.ANALOG_OUTPUT, 1)
OID_OA_DMPR = ObjectId(ObjectType.ANALOG_OUTPUT, 2)
OID_SF_ST = ObjectId(ObjectType.BINARY_OUTPUT, 1)

OID_CHWST = ObjectId(ObjectType.ANALOG_INPUT, 1)
OID_CHWST_SP = ObjectId(ObjectType.ANALOG_VALUE, 1)


class VavController(FieldDevice):
    """Single-maximum VAV sequence: cooling modulates airflow, heating
    modulates reheat at minimum airflow, never both."""

    def __init__(self, fabric, addr, router_station, schedule, plant, cfg: VavConfig,
                 device_instance: int, name: str):
        core = ControllerCore(name, device_instance)
        sp = cfg.setpoints
        core.add_point(_ai(1, "ZN-T", UNITS_DEG_C))
        core.add_point(_ai(2, "ZN-FLOW", UNITS_KG_PER_S))
        core.add_point(_commandable(ObjectType.ANALOG_VALUE, 1, "ZN-CLGSP",
                                    UNITS_DEG_C, AppValue.real(sp.cool_occ)))
        core.add_point(_commandable(ObjectType.ANALOG_VALUE, 2, "ZN-HTGSP",
                                    UNITS_DEG_C, AppValue.real(sp.heat_occ)))
        core.add_point(_commandable(ObjectType.ANALOG_OUTPUT, 1, "SA-FLOW-SP",
                                    UNITS_KG_PER_S, AppValue.real(0.0)))
        core.add_point(_commandable(ObjectType.ANALOG_OUTPUT, 2, "RH-POS",
                                    UNITS_PERCENT, AppValue.real(0.0)))
        super().__init__(fabric, core, addr, router_station, schedule, plant)
        self.cfg = cfg
        self.cool_loop = PiLoop(cfg.kp, cfg.ki)
        self.heat_loop = PiLoop(cfg.kp, cfg.ki)

    def loop_step(self, now: float, t_us: int) -> None:
        i = self.cfg.zone_index
        t_zone = self.plant.zone_temp(i, t_us)
        self.core.point(OID_ZN_T).value = AppValue.real(t_zone)
        self.core.point(OID_ZN_FLOW).value = AppValue.real(self.plant.zone_flow(i, t_us))
        occupied = self.schedule.is_occupied(now)
        if not occupied:
            airflow, reheat = 0.0, 0.0
        else:
            cool_sp = self.core.point(OID_ZN_CLGSP).effective_float()
            heat_sp = self.core.point(OID_ZN_HTGSP).effective_float()
            dt = self.core.loop_period
            u_c = self.cool_loop.step(t_zone - cool_sp, dt)
            u_h = self.heat_loop.step(heat_sp - t_zone, dt)
            if u_c > 0.0:
                airflow = self.cfg.v_min + u_c * (self.cfg.v_cool_max - self.cfg.v_min)
                reheat = 0.0
            elif u_h > 0.0:
                airflow, reheat = self.cfg.v_min, u_h
            else:
                airflow, reheat = self.cfg.v_min, 0.0
        self.core.point(OID_FLOW_SP).relinquish_default = AppValue.real(airflow)
        self.core.point(OID_RH_POS).relinquish_default = AppValue.real(reheat)
        # the point wins over the loop when an operator has commanded it
        self.plant.airflow_sp[i] = self.core.point(OID_FLOW_SP).effective_float()
        self.plant.reheat[i] = self.core.point(OID_RH_POS).effective_float()


class AhuController(FieldDevice):
    """Holds supply-air temperature at its commandable setpoint with the
    cooling valve; fan and outdoor-air damper follow the schedule."""

    def __init__(self, fabric, addr, router_station, schedule, plant, cfg: AhuConfig,
                 device_instance: int, name: str = "ahu"):
        core = ControllerCore(name, device_instance)
        core.add_point(_ai(1, "SAT", UNITS_DEG_C))
        core.add_point(_commandable(ObjectType.ANALOG_VALUE, 1, "SAT-SP",
                                    UNITS_DEG_C, AppValue.real(cfg.sat_default)))
        core.add_point(_commandable(ObjectType.ANALOG_OUTPUT, 1, "CLG-VLV",
                                    UNITS_PERCENT, AppValue.real(0.0)))
        core.add_point(_commandable(ObjectType.ANALOG_OUTPUT, 2, "OA-DMPR",
                                    UNITS_PERCENT, AppValue.real(0.0)))
        core.add_point(_commandable(ObjectType.BINARY_OUTPUT, 1, "SF-ST",
                                    UNITS_NO_UNITS, AppValue.boolean(False)))
        super().__init__(fabric, core, addr, router_station, schedule, plant)
        self.cfg = cfg
        self.valve_loop = PiLoop(cfg.kp, cfg.ki)

    def loop_step(self, now: float, t_us: int) -> None:
        sat = self.plant.sat(t_us)
        self.core.point(OID_SAT).value = AppValue.real(sat)
        occupied = self.schedule.is_occupied(now)
        sat_sp = self.core.point(OID_SAT_SP).effective_float()
        # positive error (air too warm) opens the valve
        valve = self.valve_loop.step(sat - sat_sp, self.core.loop_period) if occupied else 0.0
        self.core.point(OID_CLG_VLV).relinquish_default = AppValue.real(valve)
        self.core.point(OID_OA_DMPR).relinquish_default = AppValue.real(
            self.cfg.oa_frac_min if occupied else 0.0
        )
        self.core.point(OID_SF_ST).relinquish_default = AppValue.boolean(occupied)
        self.plant.valve_cool = self.core.point(OID_CLG_VLV).effective_float()
        self.plant.oa_frac = self.core.point(OID_OA_DMPR).effective_float()
        self.plant.fan_on = self.core.point(OID_SF_ST).effective_float() > 0.5


class ChillerController(FieldDevice):
    """Publishes chilled-water supply temperature and applies its setpoint."""

    def __init__(self, fabric, addr, router_station, schedule, plant, cfg: ChillerConfig,
                 device_instance: int, name: str = "chiller"):
        core = ControllerCore(name, device_instance)
        core.add_point(_ai(1, "CHWST", UNITS_DEG_C))
        core.add_point(_commandable(ObjectType.ANALOG_VALUE, 1, "CHWST-SP",
                                    UNITS_DEG_C, AppValue.real(cfg.chw_default)))
        super().__init__(fabric, core, addr, router_station, schedule, plant)
        self.cfg = cfg

    def loop_step(self, now: float, t_us: int) -> None:
        self.core.point(OID_CHWST).value = AppValue.real(self.plant.chw_temp(t_us))
        self.plant.chw_setpoint = self.core.point(OID_CHWST_SP).effective_float()


@dataclass(frozen=True, slots=True)
class FieldTopology:
    """Default station plan on the field bus (router at station 0)."""

    field_net: int = 2001
    router_station: int = 0
    ahu_station: int = 1
    ahu_instance: int = 1201
    vav_stations: tuple[int, ...] = (2, 3, 4, 5, 6)
    vav_instances: tuple[int, ...] = (1301, 1302, 1303, 1304, 1305)
    chiller_station: int = 7
    chiller_instance: int = 1101


def build_field_devices(
    fabric: Fabric,
    plant: PlantAdapter,
    schedule: DailySchedule,
    topology: FieldTopology = FieldTopology(),
    vav_cfg: Optional[VavConfig] = None,
    ahu_cfg: AhuConfig = AhuConfig(),
    chiller_cfg: ChillerConfig = ChillerConfig(),
) -> dict[str, FieldDevice]:
    """Attach the standard seven controllers and return them by name."""
    net, router = topology.field_net, topology.router_station
    devices: dict[str, FieldDevice] = {}
    devices["ahu"] = AhuController(
        fabric, NodeAddr.station(net, topology.ahu_station), router, schedule, plant,
        ahu_cfg, topology.ahu_instance,
    )
    for i, (station, instance) in enumerate(
        zip(topology.vav_stations, topology.vav_instances)
    ):
        cfg = vav_cfg or VavConfig(zone_index=i)
        if cfg.zone_index != i:
            cfg = VavConfig(zone_index=i, v_min=cfg.v_min, v_cool_max=cfg.v_cool_max,
                            setpoints=cfg.setpoints, kp=cfg.kp, ki=cfg.ki)
        name = f"vav{i + 1}"
        devices[name] = VavController(
            fabric, NodeAddr.station(net, station), router, schedule, plant,
            cfg, instance, name,
        )
    devices["chiller"] = ChillerController(
        fabric, NodeAddr.station(net, topology.chiller_station), router, schedule, plant,
        chiller_cfg, topology.chiller_instance,
    )
    return devices
