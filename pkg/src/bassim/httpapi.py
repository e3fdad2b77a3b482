"""Live HTTP control surface: REST endpoints plus a server-push event stream.

The simulation stays single-threaded.  ``serve`` paces the loop on the
calling thread while uvicorn handles requests on a daemon thread; the two
sides meet only in :class:`SimBridge`.  Handlers read published snapshots
(plain dicts, replaced wholesale under a lock) and enqueue closures that
the drive loop executes between steps, so no handler ever touches live
simulation objects.  Set ``BAS_SIM_TOKEN`` to require a bearer token on
every ``/api`` route.
"""

from __future__ import annotations

import json
import os
import queue
import socket
import threading
import time
from pathlib import Path
from typing import Any, Callable, Iterator, Optional

import uvicorn
from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .attacks import AttackError, spec_from_dict
from .runner import BundleWriter, Simulation
from .scenario import ConfigError, ScenarioConfig
from .supervisor import UnknownPointError

STREAM_PERIOD_S = 0.5  # wall seconds between pushes; spec floor is 1 Hz
COMMAND_TIMEOUT_S = 10.0
AUDIT_TAIL = 1000


class BridgeClosed(RuntimeError):
    """Command submitted after the simulation stopped draining."""


class _Command:
    __slots__ = ("fn", "done", "result", "error")

    def __init__(self, fn: Callable[[Simulation], Any]):
        self.fn = fn
        self.done = threading.Event()
        self.result: Any = None
        self.error: Optional[BaseException] = None


class SimBridge:
    """Thread boundary between HTTP handlers and the simulation loop.

    The drive loop owns the simulation; handlers own nothing.  Reads come
    from ``snapshot()``/``points()``/... which copy under the lock;
    mutations go through ``submit()`` and run on the simulation thread at
    the next drain.  ``paused``/``speed``/stop are plain flags: handlers
    assign them, the loop polls them, and nothing else shares them.
    """

    def __init__(self, speed: Optional[float] = 1.0):
        self.speed = speed  # sim seconds per wall second; None = unpaced
        self.paused = False
        self._stop = False
        self._stopped = False
        self._lock = threading.Lock()
        self._queue: "queue.Queue[_Command]" = queue.Queue()
        self._snap: dict = {"sim_time": 0.0, "running": False, "paused": False}
        self._devices: list[dict] = []
        self._alarms: list[dict] = []
        self._attacks: list[dict] = []
        self._latest: dict[str, dict] = {}
        self._points_version = 0
        self._alarm_log: list[dict] = []
        self._audit_tail: list[dict] = []
        self._audit_total = 0
        self._last_packets = 0
        self._point_ids: tuple[str, ...] = ()

    # -- wiring (simulation thread, before the loop starts) -----------------

    def attach(self, sim: Simulation, writer: BundleWriter) -> None:
        """Chain the bundle sinks through the bridge so the API sees them."""
        self._point_ids = tuple(str(p) for p in sim.server.monitored)

        def on_trends(records):
            writer.on_trends(records)
            with self._lock:
                for r in records:
                    self._latest[r.point] = {
                        "t": r.sim_time_s, "value": r.value, "quality": r.quality}
                self._points_version += 1

        def on_audit(rec):
            writer.on_audit(rec)
            row = {"t": rec.t_s, "actor": rec.actor, "point": rec.point,
                   "value": rec.value, "priority": rec.priority}
            with self._lock:
                self._audit_tail.append(row)
                del self._audit_tail[:-AUDIT_TAIL]
                self._audit_total += 1

        def on_alarm(event, what):
            row = {"what": what, "rule": event.rule_id, "point": event.point,
                   "onset_s": event.onset_s, "cleared_s": event.cleared_s,
                   "peak": event.peak}
            with self._lock:
                self._alarm_log.append(row)

        sim.server.trend_sink = on_trends
        sim.server.audit_sink = on_audit
        sim.server.alarm_sink = on_alarm

    # -- simulation-thread side ----------------------------------------------

    def drain(self, sim: Simulation) -> None:
        while True:
            try:
                cmd = self._queue.get_nowait()
            except queue.Empty:
                return
            try:
                cmd.result = cmd.fn(sim)
            except BaseException as exc:  # handler re-raises on its thread
                cmd.error = exc
            cmd.done.set()

    def publish(self, sim: Simulation) -> None:
        packets = len(sim.log.packets)
        server = sim.server
        devices = []
        for binding in sorted(server.bindings.values(), key=lambda b: b.name):
            entry = server.devices.get(binding.instance)
            devices.append({
                "name": binding.name,
                "instance": binding.instance,
                "network": server.field_net,
                "station": binding.station,
                "online": entry is not None,
                "last_seen": entry.last_seen if entry else None,
            })
        alarms = [{"rule": ev.rule_id, "point": ev.point, "onset_s": ev.onset_s,
                   "cleared_s": ev.cleared_s, "peak": ev.peak}
                  for ev in server.alarm_engine.events]
        with self._lock:
            self._snap = {
                "scenario": sim.cfg.name,
                "date": sim.cfg.date,
                "seed": sim.cfg.seed,
                "sim_time": sim.now,
                "duration_s": sim.cfg.duration_s,
                "speed": "max" if self.speed is None else self.speed,
                "running": not self._stopped and not sim.finished(),
                "paused": self.paused,
                "traffic_pps": packets - self._last_packets,
                "packets": packets,
            }
            self._devices = devices
            self._alarms = alarms
            self._attacks = sim.engine.status()
            self._last_packets = packets

    def request_stop(self) -> None:
        self._stop = True

    @property
    def stop_requested(self) -> bool:
        return self._stop

    def mark_stopped(self) -> None:
        self._stopped = True
        with self._lock:
            self._snap = dict(self._snap, running=False)
        self.drain_failed()

    def drain_failed(self) -> None:
        """Fail whatever is still queued so no handler waits out its timeout."""
        while True:
            try:
                cmd = self._queue.get_nowait()
            except queue.Empty:
                return
            cmd.error = BridgeClosed("simulation stopped")
            cmd.done.set()

    # -- handler side ----------------------------------------------------------

    def submit(self, fn: Callable[[Simulation], Any],
               timeout: float = COMMAND_TIMEOUT_S) -> Any:
        if self._stopped:
            raise BridgeClosed("simulation stopped")
        cmd = _Command(fn)
        self._queue.put(cmd)
        if not cmd.done.wait(timeout):
            raise TimeoutError("simulation loop did not pick up the command")
        if cmd.error is not None:
            raise cmd.error
        return cmd.result

    def snapshot(self) -> dict:
        with self._lock:
            snap = dict(self._snap)
        # control flags are bridge-owned; reading them live avoids a stale
        # publish right after a pause/resume/speed request
        snap["speed"] = "max" if self.speed is None else self.speed
        snap["paused"] = self.paused
        return snap

    def devices(self) -> list[dict]:
        with self._lock:
            return [dict(d) for d in self._devices]

    def alarms(self) -> list[dict]:
        with self._lock:
            return [dict(a) for a in self._alarms]

    def attacks(self) -> list[dict]:
        with self._lock:
            return [dict(a) for a in self._attacks]

    def point_ids(self) -> tuple[str, ...]:
        return self._point_ids

    def latest(self) -> dict[str, Optional[dict]]:
        with self._lock:
            return {pid: (dict(self._latest[pid]) if pid in self._latest else None)
                    for pid in self._point_ids}

    def points_version(self) -> int:
        with self._lock:
            return self._points_version

    def audit_rows(self, limit: int) -> tuple[list[dict], int]:
        with self._lock:
            rows = [dict(r) for r in self._audit_tail[-limit:]]
            return rows, self._audit_total

    def alarm_events_since(self, index: int) -> list[dict]:
        with self._lock:
            return [dict(r) for r in self._alarm_log[index:]]

    def alarm_log_len(self) -> int:
        with self._lock:
            return len(self._alarm_log)


def drive(sim: Simulation, bridge: SimBridge) -> None:
    """Run the simulation to completion, honoring pause/speed/stop flags.

    The pacing target is rebuilt after every pause or speed change so a
    long pause never turns into a burst of catch-up steps.
    """
    sim.start()
    bridge.publish(sim)
    pace = None if bridge.speed is None else 1.0 / bridge.speed
    next_wall = time.monotonic()
    while not sim.finished() and not bridge.stop_requested:
        bridge.drain(sim)
        if bridge.paused:
            bridge.publish(sim)  # wall clock moves, sim clock must not
            time.sleep(0.05)
            next_wall = time.monotonic()
            continue
        sim.step_second()
        bridge.publish(sim)
        new_pace = None if bridge.speed is None else 1.0 / bridge.speed
        if new_pace != pace:
            pace = new_pace
            next_wall = time.monotonic()
        if pace is not None:
            next_wall += pace
            delay = next_wall - time.monotonic()
            if delay > 0:
                time.sleep(delay)
    if not bridge.stop_requested:
        sim.drain_polls()
    bridge.drain(sim)
    bridge.publish(sim)
    bridge.mark_stopped()


# -- the app -------------------------------------------------------------------


def _require_token(authorization: Optional[str] = Header(default=None)) -> None:
    token = os.environ.get("BAS_SIM_TOKEN")
    if token and authorization != f"Bearer {token}":
        raise HTTPException(status_code=401, detail="missing or bad bearer token")


def _sse(event: str, data: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(data, separators=(',', ':'))}\n\n"


def build_app(bridge: SimBridge, ui_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="bassim", docs_url=None, redoc_url=None)
    auth = Depends(_require_token)

    @app.exception_handler(BridgeClosed)
    def _closed(request, exc: BridgeClosed) -> JSONResponse:
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    @app.exception_handler(TimeoutError)
    def _timed_out(request, exc: TimeoutError) -> JSONResponse:
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    @app.get("/api/sim", dependencies=[auth])
    def get_sim() -> dict:
        return bridge.snapshot()

    @app.post("/api/sim/pause", dependencies=[auth])
    def pause() -> dict:
        bridge.paused = True
        return {"paused": True}

    @app.post("/api/sim/resume", dependencies=[auth])
    def resume() -> dict:
        bridge.paused = False
        return {"paused": False}

    @app.post("/api/sim/speed", dependencies=[auth])
    def set_speed(body: dict) -> dict:
        value = body.get("multiplier")
        if value == "max":
            bridge.speed = None
        elif isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0:
            bridge.speed = float(value)
        else:
            raise HTTPException(status_code=400,
                                detail="multiplier must be a positive number or 'max'")
        return {"speed": "max" if bridge.speed is None else bridge.speed}

    @app.get("/api/devices", dependencies=[auth])
    def get_devices() -> dict:
        return {"devices": bridge.devices()}

    @app.get("/api/points", dependencies=[auth])
    def get_points() -> dict:
        latest = bridge.latest()
        return {"points": [{"id": pid, "latest": latest[pid]}
                           for pid in bridge.point_ids()]}

    @app.get("/api/points/{pid}", dependencies=[auth])
    def get_point(pid: str) -> dict:
        if pid not in bridge.point_ids():
            raise HTTPException(status_code=404, detail=f"unknown point {pid!r}")
        rows = bridge.submit(lambda sim: len(sim.server.trends[pid]))
        return {"id": pid, "latest": bridge.latest()[pid], "rows": rows}

    @app.post("/api/points/{pid}/write", dependencies=[auth])
    def write_point(pid: str, body: dict) -> dict:
        value = body.get("value")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise HTTPException(status_code=400, detail="value must be a number")
        priority = body.get("priority", 16)
        if isinstance(priority, bool) or not isinstance(priority, int) \
                or not 1 <= priority <= 16:
            raise HTTPException(status_code=400, detail="priority must be 1..16")
        try:
            ticket = bridge.submit(
                lambda sim: sim.server.write_point(pid, float(value), priority,
                                                   actor="operator"))
        except UnknownPointError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        return {"point": pid, "value": float(value), "priority": priority,
                "status": ticket.status}

    @app.get("/api/trends/{pid}", dependencies=[auth])
    def get_trends(pid: str,
                   frm: Optional[float] = Query(default=None, alias="from"),
                   to: Optional[float] = None) -> dict:
        lo = float("-inf") if frm is None else frm
        hi = float("inf") if to is None else to

        def read(sim: Simulation) -> list:
            rows = sim.server.trends.get(pid)
            if rows is None:
                raise UnknownPointError(f"unknown point {pid!r}")
            return [[r.sim_time_s, r.value, r.quality]
                    for r in rows if lo <= r.sim_time_s <= hi]

        try:
            rows = bridge.submit(read)
        except UnknownPointError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        return {"point": pid, "rows": rows}

    @app.get("/api/alarms", dependencies=[auth])
    def get_alarms() -> dict:
        alarms = bridge.alarms()
        return {"alarms": alarms,
                "open": sum(1 for a in alarms if a["cleared_s"] is None)}

    @app.get("/api/audit", dependencies=[auth])
    def get_audit(limit: int = 100) -> dict:
        rows, total = bridge.audit_rows(max(1, min(limit, AUDIT_TAIL)))
        return {"rows": rows, "total": total}

    @app.get("/api/attacks", dependencies=[auth])
    def get_attacks() -> dict:
        return {"attacks": bridge.attacks()}

    @app.post("/api/attacks", dependencies=[auth])
    def post_attack(body: dict) -> dict:
        try:
            spec = spec_from_dict(body)
        except AttackError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        try:
            ids = bridge.submit(
                lambda sim: sim.engine.schedule([spec], sim.cfg.duration_s))
        except AttackError as exc:
            # window/overlap conflicts with what is already booked
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return {"ids": ids}

    @app.delete("/api/attacks/{attack_id}", dependencies=[auth])
    def delete_attack(attack_id: str) -> dict:
        if not bridge.submit(lambda sim: sim.engine.cancel(attack_id)):
            raise HTTPException(status_code=404,
                                detail=f"unknown attack id {attack_id!r}")
        return {"cancelled": attack_id}

    @app.get("/api/stream", dependencies=[auth])
    def stream() -> StreamingResponse:
        def events() -> Iterator[str]:
            last_points = -1
            alarm_cursor = bridge.alarm_log_len()
            while True:
                snap = bridge.snapshot()
                yield _sse("tick", {
                    "sim_time": snap.get("sim_time"),
                    "speed": snap.get("speed"),
                    "running": snap.get("running"),
                    "paused": snap.get("paused"),
                    "traffic_pps": snap.get("traffic_pps"),
                })
                version = bridge.points_version()
                if version != last_points:
                    last_points = version
                    yield _sse("points", {"values": bridge.latest()})
                for row in bridge.alarm_events_since(alarm_cursor):
                    alarm_cursor += 1
                    yield _sse("alarm", row)
                if not snap.get("running"):
                    return
                time.sleep(STREAM_PERIOD_S)

        return StreamingResponse(events(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    if ui_dir is not None and ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/")
        def index() -> dict:
            return {"api": "/api", "stream": "/api/stream"}

    return app


def find_ui_dir() -> Optional[Path]:
    """Static assets: $BAS_SIM_UI wins, else ./frontend/dist if present."""
    env = os.environ.get("BAS_SIM_UI")
    if env:
        return Path(env)
    local = Path("frontend/dist")
    return local if local.is_dir() else None


def serve(cfg: ScenarioConfig, out_dir, port: int = 8000,
          host: str = "127.0.0.1") -> dict:
    """Run a scenario with the API live; returns the bundle summary.

    Binds eagerly so a busy port fails as a configuration error before
    anything is written.  Ctrl-C stops the loop early but still finalizes
    the bundle with whatever the run produced.
    """
    try:
        sock = socket.create_server((host, port))
    except OSError as exc:
        raise ConfigError(f"cannot bind {host}:{port}: {exc}") from None
    sim = Simulation(cfg)
    writer = BundleWriter(out_dir, cfg)
    bridge = SimBridge(speed=cfg.speed)
    bridge.attach(sim, writer)
    app = build_app(bridge, ui_dir=find_ui_dir())
    config = uvicorn.Config(app, log_level="warning", access_log=False)
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]},
                              daemon=True, name="bassim-http")
    thread.start()
    print(f"serving {cfg.name} on http://{host}:{port} (Ctrl-C stops and finalizes)")
    try:
        drive(sim, bridge)
    except KeyboardInterrupt:
        bridge.mark_stopped()
    except BaseException:
        writer.close_streams()
        raise
    finally:
        bridge.request_stop()
        server.should_exit = True
        thread.join(timeout=5.0)
    return writer.finalize(sim.log, sim.server)
