"""Declarative attack scheduling against the virtual BAS.

Two families from the threat model, plus a registration-only probe:

* False data injection: rewrite a supervisory setpoint during a window,
  either through the compromised server's own write interface (audited as
  actor ``attacker``, no extra wire signature) or from a rogue IP node that
  pushes WriteProperty frames through the router (wire-visible).
* Device DoS: register as a foreign device, then flood one controller with
  ReinitializeDevice requests so it never leaves its soft-reboot window.

All execution is fire-and-forget timers on the simulation fabric; no attack
traffic is emitted outside [start, end).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Union

from .bacnet import apdu as ap
from .bacnet import bvll
from .bacnet.npdu import DEFAULT_HOP_COUNT, Npdu
from .bacnet.objects import PROP_PRESENT_VALUE, AppValue
from .netfabric import Fabric, NodeAddr
from .supervisor import BasServer, DeviceBinding, PointId, default_bindings

log = logging.getLogger(__name__)

VIA_COMPROMISED_SERVER = "compromised-server"
VIA_ROGUE_DEVICE = "rogue-device"

DOS_REGISTER_TTL_S = 900.0  # foreign-device lease the flood renews at half-life


class AttackError(ValueError):
    """Invalid attack specification (bad window, rate, target, or overlap)."""


def parse_temperature(value: Union[str, int, float]) -> float:
    """Accept Celsius numbers or suffixed strings: ``"95F"`` == ``"35C"`` == 35.0."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    text = str(value).strip()
    if not text:
        raise AttackError("empty temperature")
    unit = text[-1].upper()
    if unit not in ("C", "F"):
        raise AttackError(f"temperature string needs a C or F suffix: {value!r}")
    try:
        magnitude = float(text[:-1])
    except ValueError:
        raise AttackError(f"bad temperature: {value!r}") from None
    return magnitude if unit == "C" else (magnitude - 32.0) * 5.0 / 9.0


def parse_clock_s(value: Union[str, int, float]) -> float:
    """Seconds since midnight from a number or an ``HH:MM[:SS]`` string."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    parts = str(value).strip().split(":")
    if len(parts) not in (2, 3) or not all(p.isdigit() for p in parts):
        raise AttackError(f"bad clock time: {value!r}")
    h, m = int(parts[0]), int(parts[1])
    s = int(parts[2]) if len(parts) == 3 else 0
    if m >= 60 or s >= 60:
        raise AttackError(f"bad clock time: {value!r}")
    return h * 3600.0 + m * 60.0 + s


@dataclass(frozen=True, slots=True)
class FdiSpec:
    kind = "fdi"
    target_point: str
    value: float
    start_s: float
    end_s: float
    via: str = VIA_COMPROMISED_SERVER
    rewrite_period_s: float = 60.0
    # 16 contends with the dispatch cycle (recoverable); 8 outranks it
    priority: int = 16
    attack_id: Optional[str] = None


@dataclass(frozen=True, slots=True)
class DosSpec:
    kind = "device-dos"
    target_device: str
    start_s: float
    end_s: float
    rate_hz: float = 1.0
    reinit_state: int = ap.REINIT_WARMSTART
    attack_id: Optional[str] = None


@dataclass(frozen=True, slots=True)
class RogueRegisterSpec:
    kind = "rogue-register"
    start_s: float
    end_s: float
    ttl_s: float = 900.0
    attack_id: Optional[str] = None


AttackSpec = Union[FdiSpec, DosSpec, RogueRegisterSpec]


def spec_from_dict(raw: dict) -> AttackSpec:
    """Build a spec from the JSON/config table shape."""
    try:
        kind = raw["kind"]
        start = parse_clock_s(raw["start"])
        end = parse_clock_s(raw["end"])
        attack_id = raw.get("id")
        if kind == "fdi":
            return FdiSpec(
                target_point=raw["target_point"],
                value=parse_temperature(raw["value"]),
                start_s=start,
                end_s=end,
                via=raw.get("via", VIA_COMPROMISED_SERVER),
                rewrite_period_s=float(raw.get("rewrite_period", 60.0)),
                priority=int(raw.get("priority", 16)),
                attack_id=attack_id,
            )
        if kind == "device-dos":
            state = raw.get("reinit_state", "warmstart")
            if state not in ("warmstart", "coldstart"):
                raise AttackError(f"bad reinit_state: {state!r}")
            return DosSpec(
                target_device=raw["target_device"],
                start_s=start,
                end_s=end,
                rate_hz=float(raw.get("rate", 1.0)),
                reinit_state=(ap.REINIT_WARMSTART if state == "warmstart"
                              else ap.REINIT_COLDSTART),
                attack_id=attack_id,
            )
        if kind == "rogue-register":
            return RogueRegisterSpec(start_s=start, end_s=end,
                                     ttl_s=float(raw.get("ttl", 900.0)),
                                     attack_id=attack_id)
    except KeyError as exc:
        raise AttackError(f"attack table missing key {exc.args[0]!r}") from None
    raise AttackError(f"unknown attack kind: {raw.get('kind')!r}")


def validate_attacks(specs: list[AttackSpec], duration_s: float) -> None:
    dos_windows: dict[str, list[tuple[float, float]]] = {}
    for spec in specs:
        if not 0.0 <= spec.start_s < spec.end_s <= duration_s:
            raise AttackError(
                f"attack window [{spec.start_s}, {spec.end_s}) outside run of {duration_s}s")
        if isinstance(spec, FdiSpec):
            if spec.via not in (VIA_COMPROMISED_SERVER, VIA_ROGUE_DEVICE):
                raise AttackError(f"unknown FDI path: {spec.via!r}")
            if spec.rewrite_period_s <= 0:
                raise AttackError("rewrite_period must be positive")
            if not 1 <= spec.priority <= 16:
                raise AttackError(f"priority out of range: {spec.priority}")
            PointId.parse(spec.target_point)
        elif isinstance(spec, DosSpec):
            if spec.rate_hz <= 0:
                raise AttackError("DoS rate must be positive")
            for lo, hi in dos_windows.get(spec.target_device, ()):
                if spec.start_s < hi and lo < spec.end_s:
                    raise AttackError(
                        f"overlapping DoS windows on device {spec.target_device!r}")
            dos_windows.setdefault(spec.target_device, []).append(
                (spec.start_s, spec.end_s))
        elif isinstance(spec, RogueRegisterSpec):
            if spec.ttl_s <= 0:
                raise AttackError("TTL must be positive")


class AttackEngine:
    """Turns validated specs into fabric timers bound to an attacker node."""

    def __init__(
        self,
        fabric: Fabric,
        server: Optional[BasServer] = None,
        bindings: Optional[dict[str, DeviceBinding]] = None,
        attacker_addr: Optional[NodeAddr] = None,
        router_addr: Optional[NodeAddr] = None,
        ip_net: int = 1,
        field_net: int = 2001,
    ):
        self.fabric = fabric
        self.server = server
        self.bindings = default_bindings() if bindings is None else bindings
        self.attacker_addr = attacker_addr or NodeAddr.ip(ip_net, "10.13.254.99")
        self.router_addr = router_addr or NodeAddr.ip(ip_net, "10.13.254.5")
        self.field_net = field_net
        self.scheduled: dict[str, AttackSpec] = {}
        self._active: dict[str, bool] = {}
        self._invoke = 0
        self._attached = False

    # -- public ------------------------------------------------------------

    def schedule(self, specs: list[AttackSpec], duration_s: float) -> list[str]:
        # re-validate alongside what is already booked so a live-launched DoS
        # cannot overlap a scheduled one on the same device
        existing = [s for s in self.scheduled.values() if isinstance(s, DosSpec)]
        validate_attacks(existing + list(specs), duration_s)
        ids = []
        for spec in specs:
            aid = spec.attack_id or f"{spec.kind}-{len(self.scheduled) + 1}"
            if aid in self.scheduled:
                raise AttackError(f"duplicate attack id {aid!r}")
            spec = replace(spec, attack_id=aid)
            self._check_target(spec)
            self.scheduled[aid] = spec
            self._active[aid] = True
            if isinstance(spec, FdiSpec):
                if spec.via == VIA_COMPROMISED_SERVER and self.server is None:
                    raise AttackError("compromised-server FDI needs a server")
                if spec.via == VIA_ROGUE_DEVICE:
                    self._ensure_attached()
                self.fabric.call_at(spec.start_s, lambda s=spec: self._fdi_tick(s, 0))
            elif isinstance(spec, DosSpec):
                self._ensure_attached()
                self.fabric.call_at(spec.start_s, lambda s=spec: self._dos_start(s))
            else:
                self._ensure_attached()
                self.fabric.call_at(spec.start_s, lambda s=spec: self._register_tick(s, 0))
            ids.append(aid)
        return ids

    def cancel(self, attack_id: str) -> bool:
        """Stop an attack at the next tick; unknown ids return False."""
        if attack_id not in self._active:
            return False
        self._active[attack_id] = False
        return True

    def status(self) -> list[dict]:
        """Scheduled attacks with their live/cancelled state, oldest first."""
        return [
            {
                "id": aid,
                "kind": spec.kind,
                "target": getattr(spec, "target_point",
                                  getattr(spec, "target_device", None)),
                "start_s": spec.start_s,
                "end_s": spec.end_s,
                "active": self._active[aid],
            }
            for aid, spec in self.scheduled.items()
        ]

    # -- plumbing ------------------------------------------------------------

    def _check_target(self, spec: AttackSpec) -> None:
        if isinstance(spec, FdiSpec):
            device = PointId.parse(spec.target_point).device
        elif isinstance(spec, DosSpec):
            device = spec.target_device
        else:
            return
        if device not in self.bindings:
            raise AttackError(f"unknown target device {device!r}")

    def _ensure_attached(self) -> None:
        if not self._attached:
            # attacker silently absorbs replies, NAKs, forwarded broadcasts
            self.fabric.attach(self.attacker_addr, lambda delivery: None)
            self._attached = True

    def _next_invoke(self) -> int:
        self._invoke = (self._invoke + 1) % 256
        return self._invoke

    def _send_confirmed(self, station: int, request: ap.ConfirmedRequest) -> None:
        npdu = Npdu(expects_reply=True, dnet=self.field_net,
                    dadr=NodeAddr.station(self.field_net, station).mac,
                    hop_count=DEFAULT_HOP_COUNT)
        frame = bvll.OriginalUnicast(npdu, request)
        self.fabric.send(self.attacker_addr, self.router_addr, bvll.encode_frame(frame))

    # -- false data injection ----------------------------------------------------

    def _fdi_tick(self, spec: FdiSpec, k: int) -> None:
        if not self._active.get(spec.attack_id, False):
            return
        if spec.via == VIA_COMPROMISED_SERVER:
            self.server.write_point(spec.target_point, spec.value,
                                    priority=spec.priority, actor="attacker")
        else:
            pid = PointId.parse(spec.target_point)
            request = ap.build_write_property(
                pid.oid, PROP_PRESENT_VALUE, AppValue.real(spec.value),
                invoke_id=self._next_invoke(), priority=spec.priority)
            self._send_confirmed(self.bindings[pid.device].station, request)
        next_t = spec.start_s + (k + 1) * spec.rewrite_period_s
        if next_t < spec.end_s:
            self.fabric.call_at(next_t, lambda: self._fdi_tick(spec, k + 1))

    # -- device denial of service -------------------------------------------------

    def _dos_start(self, spec: DosSpec) -> None:
        if not self._active.get(spec.attack_id, False):
            return
        self._register(DOS_REGISTER_TTL_S)
        self._dos_renew(spec, 1)
        self._dos_tick(spec, 0)

    def _dos_renew(self, spec: DosSpec, k: int) -> None:
        next_t = spec.start_s + k * (DOS_REGISTER_TTL_S / 2.0)
        if next_t < spec.end_s:
            def fire() -> None:
                if self._active.get(spec.attack_id, False):
                    self._register(DOS_REGISTER_TTL_S)
                    self._dos_renew(spec, k + 1)
            self.fabric.call_at(next_t, fire)

    def _dos_tick(self, spec: DosSpec, k: int) -> None:
        if not self._active.get(spec.attack_id, False):
            return
        request = ap.build_reinitialize(spec.reinit_state,
                                        invoke_id=self._next_invoke())
        self._send_confirmed(self.bindings[spec.target_device].station, request)
        next_t = spec.start_s + (k + 1) / spec.rate_hz
        if next_t < spec.end_s:
            self.fabric.call_at(next_t, lambda: self._dos_tick(spec, k + 1))

    # -- foreign-device registration ------------------------------------------------

    def _register(self, ttl_s: float) -> None:
        frame = bvll.RegisterForeignDevice(int(round(ttl_s)))
        self.fabric.send(self.attacker_addr, self.router_addr, bvll.encode_frame(frame))

    def _register_tick(self, spec: RogueRegisterSpec, k: int) -> None:
        if not self._active.get(spec.attack_id, False):
            return
        self._register(spec.ttl_s)
        next_t = spec.start_s + (k + 1) * (spec.ttl_s / 2.0)
        if next_t < spec.end_s:
            self.fabric.call_at(next_t, lambda: self._register_tick(spec, k + 1))
