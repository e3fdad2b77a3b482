"""Scenario execution: assemble the virtual site, run the day, write the bundle.

A run directory holds everything a dataset consumer needs: the resolved
scenario, the supervisory trends and audit log, the traffic capture in
three forms, and a summary whose content digests make the bundle
integrity-checkable after the fact.  Every byte is a function of
(scenario, seed): no wall-clock time leaks into the outputs.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from pathlib import Path

from . import capture
from .attacks import AttackEngine
from .control import DailySchedule
from .devices import AhuConfig, PlantAdapter, VavConfig, build_field_devices
from .netfabric import BacnetRouter, Fabric, NodeAddr
from .plant import PlantParams, SensorNoise, ZoneParams, initial_state, step_physics
from .scenario import ScenarioConfig, emit_resolved, load_scenario_weather
from .supervisor import AuditRecord, BasServer, TrendRecord

IP_NET = 1
FIELD_NET = 2001
SERVER_IP = "10.13.254.2"
ROUTER_IP = "10.13.254.5"

BUNDLE_FILES = (
    "scenario.resolved",
    "trends.csv",
    "audit.jsonl",
    "traffic.pcap",
    "traffic.jsonl",
    "flows.json",
    "summary.json",
)


def plant_params(cfg: ScenarioConfig) -> PlantParams:
    """Four identical perimeter zones plus one interior zone."""
    perimeter = ZoneParams(c_z=cfg.c_z, ua_out=cfg.ua_out, ua_core=cfg.ua_core,
                           q_occ=cfg.q_occ, q_unocc=cfg.q_unocc,
                           v_min=cfg.v_min, v_cool_max=cfg.v_cool_max)
    interior = ZoneParams(c_z=cfg.c_z, ua_out=0.0, ua_core=0.0,
                          q_occ=cfg.q_occ, q_unocc=cfg.q_unocc_interior,
                          v_min=cfg.v_min, v_cool_max=cfg.v_cool_max)
    return PlantParams(zones=(perimeter,) * 4 + (interior,),
                       chiller_capacity_w=cfg.chiller_capacity_w)


class Simulation:
    """A fully wired site: fabric, router, seven controllers, supervisor.

    Construction only assembles.  ``start`` books the supervisor timers and
    any scenario attacks; the driver then alternates one second of plant
    physics with the network events due inside that second.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.weather, self.start_hour = load_scenario_weather(cfg)
        self.log = capture.PacketLog()
        self.fabric = Fabric(seed=cfg.seed, tap=self.log.tap)
        self.fabric.add_segment(IP_NET, cfg.ip_base_latency_s, cfg.ip_jitter_s)
        self.fabric.add_segment(FIELD_NET, cfg.field_base_latency_s, cfg.field_jitter_s)
        self.router = BacnetRouter(self.fabric, NodeAddr.ip(IP_NET, ROUTER_IP),
                                   NodeAddr.station(FIELD_NET, 0))
        self.schedule = DailySchedule(int(cfg.occupied_start_s), int(cfg.occupied_end_s))
        noise = SensorNoise(cfg.seed, cfg.sensor_sigma_k) if cfg.sensor_sigma_k > 0 else None
        self.params = plant_params(cfg)
        self.plant = PlantAdapter(noise=noise)
        self.plant.state = initial_state(self.params, t_start=cfg.t_start_c,
                                         t_oa=self.weather.at(self.start_hour))
        self.devices = build_field_devices(
            self.fabric, self.plant, self.schedule,
            vav_cfg=VavConfig(zone_index=0, v_min=cfg.v_min, v_cool_max=cfg.v_cool_max,
                              kp=cfg.vav_kp, ki=cfg.vav_ki),
            ahu_cfg=AhuConfig(kp=cfg.ahu_kp, ki=cfg.ahu_ki),
        )
        for j, dev in enumerate(self.devices.values()):
            dev.start(0.05 + 0.01 * j)
        self.server = BasServer(
            self.fabric, NodeAddr.ip(IP_NET, SERVER_IP), NodeAddr.ip(IP_NET, ROUTER_IP),
            schedule=self.schedule,
            poll_interval_s=cfg.poll_interval_s,
            poll_timeout_s=cfg.poll_timeout_s,
            dispatch_period_s=cfg.dispatch_period_s,
        )
        self.engine = AttackEngine(self.fabric, server=self.server)
        self.now = 0.0

    @property
    def total_steps(self) -> int:
        return math.ceil(self.cfg.duration_s)

    def finished(self) -> bool:
        return self.now >= self.total_steps

    def start(self) -> None:
        self.server.start(self.cfg.duration_s)
        if self.cfg.attacks:
            self.engine.schedule(list(self.cfg.attacks), self.cfg.duration_s)

    def step_second(self) -> None:
        occupied = self.schedule.is_occupied(self.now)
        t_oa = self.weather.at(self.start_hour + self.now / 3600.0)
        self.plant.state = step_physics(self.plant.state, self.plant.commands(),
                                        t_oa, occupied, self.params)
        self.now += 1.0
        self.fabric.step(self.now)

    def drain_polls(self) -> None:
        """Let the final poll cycle land after the last physics second.

        A cycle booked just before the end may still be waiting on replies
        or timeouts; a few more seconds close it out so every run carries
        exactly duration/interval rows per point.  Bounded in case a
        pathological configuration can never finish.
        """
        expected = math.ceil(self.cfg.duration_s / self.cfg.poll_interval_s)
        slack = self.cfg.poll_interval_s + 4 * self.cfg.poll_timeout_s + 32.0
        deadline = self.now + slack
        while self.now < deadline:
            if all(len(rows) >= expected for rows in self.server.trends.values()):
                return
            self.step_second()


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class BundleWriter:
    """Streams trends and audit rows during the run, closes out the capture.

    summary.json goes last and records sha256 digests of the other six
    files.
    """

    def __init__(self, out_dir, cfg: ScenarioConfig):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        (self.dir / "scenario.resolved").write_text(emit_resolved(cfg), encoding="utf-8")
        self._trends = open(self.dir / "trends.csv", "w", encoding="utf-8")
        self._trends.write("sim_time_s,point,value,quality\n")
        self._audit = open(self.dir / "audit.jsonl", "w", encoding="utf-8")

    def on_trends(self, records: list[TrendRecord]) -> None:
        for r in records:
            value = "" if r.value is None else f"{r.value:.6g}"
            self._trends.write(f"{r.sim_time_s:.10g},{r.point},{value},{r.quality}\n")

    def on_audit(self, rec: AuditRecord) -> None:
        row = {"t": rec.t_s, "actor": rec.actor, "point": rec.point,
               "value": rec.value, "priority": rec.priority}
        self._audit.write(json.dumps(row, separators=(",", ":")) + "\n")

    def close_streams(self) -> None:
        self._trends.close()
        self._audit.close()

    def finalize(self, log: capture.PacketLog, server: BasServer) -> dict:
        self.close_streams()
        ip = log.ip_packets(IP_NET)
        capture.write_pcap(ip, self.dir / "traffic.pcap", epoch_s=self.cfg.epoch_s)
        capture.write_jsonl(log.packets, self.dir / "traffic.jsonl")
        stats = capture.write_flows(ip, self.dir / "flows.json")
        summary = dict(server.trend_summary())
        summary["scenario"] = self.cfg.name
        summary["seed"] = self.cfg.seed
        summary["date"] = self.cfg.date
        summary["duration_s"] = self.cfg.duration_s
        summary["traffic"] = {"packets": len(log.packets),
                              "ip_packets": stats["packets"],
                              "ip_bytes": stats["bytes"]}
        summary["files"] = {name: _sha256(self.dir / name)
                            for name in BUNDLE_FILES if name != "summary.json"}
        with open(self.dir / "summary.json", "w", encoding="utf-8") as out:
            json.dump(summary, out, indent=2, sort_keys=True)
            out.write("\n")
        return summary


def run(cfg: ScenarioConfig, out_dir) -> dict:
    """Run a scenario to completion and write its bundle; returns the summary.

    ``cfg.speed`` paces the loop in sim seconds per wall second (None runs
    as fast as possible); pacing never changes the output bytes.
    """
    sim = Simulation(cfg)
    writer = BundleWriter(out_dir, cfg)
    sim.server.trend_sink = writer.on_trends
    sim.server.audit_sink = writer.on_audit
    sim.start()
    pace = None if cfg.speed is None else 1.0 / cfg.speed
    next_wall = time.monotonic()
    try:
        while not sim.finished():
            sim.step_second()
            if pace is not None:
                next_wall += pace
                delay = next_wall - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        sim.drain_polls()
    except BaseException:
        writer.close_streams()
        raise
    return writer.finalize(sim.log, sim.server)
