"""Five-zone office building with a single-duct VAV cooling loop.

Lumped RC thermal network, one node per zone, integrated with forward Euler
at a fixed 1 s step.  Four perimeter zones exchange heat with outdoors and
with the interior zone; the interior zone has no outdoor surface.  Air-side:
outdoor/return mixing, a chilled-water cooling coil with a finite chiller,
per-zone VAV airflow with first-order actuator lag and electric-style reheat
as a supply-temperature bump.  Humidity, solar and infiltration are omitted;
the attack signatures of interest are dry-bulb temperature and flow
phenomena.

Zone i obeys

    C_z dT_i/dt = UA_out(T_oa - T_i) + UA_core(T_int - T_i) + Q_i
                  + m_i c_p (T_sup,i - T_i),   T_sup,i = T_sa + reheat_i * 11 K

and the interior node receives the mirrored UA_core couplings.  The Euler
stability bound dt < 2 C_z / (sum UA + m c_p) sits three orders of magnitude
above the 1 s step for any reachable state.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

CP_AIR = 1006.0  # J/(kg K)


class PlantFault(RuntimeError):
    """State left the physically sane envelope; the simulation must stop."""


class WeatherError(ValueError):
    """Weather input unusable: bad syntax or insufficient coverage."""


@dataclass(frozen=True, slots=True)
class ZoneParams:
    c_z: float = 6.0e6  # J/K
    ua_out: float = 200.0  # W/K, 0 for the interior zone
    ua_core: float = 50.0  # W/K coupling to the interior zone
    q_occ: float = 1500.0  # W internal gain, occupied
    q_unocc: float = 600.0  # W internal gain, unoccupied
    v_min: float = 0.08  # kg/s
    v_cool_max: float = 1.5  # kg/s

    def __post_init__(self) -> None:
        for name in ("c_z", "ua_out", "ua_core", "q_occ", "q_unocc", "v_min", "v_cool_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def default_zones() -> tuple[ZoneParams, ...]:
    """Four perimeter zones and one interior zone (last index)."""
    perimeter = ZoneParams()
    interior = ZoneParams(ua_out=0.0, ua_core=0.0, q_unocc=150.0)
    return (perimeter, perimeter, perimeter, perimeter, interior)


@dataclass(frozen=True, slots=True)
class PlantParams:
    zones: tuple[ZoneParams, ...] = field(default_factory=default_zones)
    dt_reheat_max: float = 11.0  # K supply-air bump at full reheat
    dt_fan: float = 0.5  # K fan heat pickup
    coil_approach: float = 2.0  # K above chilled-water supply
    chiller_capacity_w: float = 140_000.0
    chw_slope_w_per_k: float = 20_000.0  # m_chw * c_p,water
    tau_actuator: float = 60.0  # s airflow first-order lag

    def __post_init__(self) -> None:
        interior = [i for i, z in enumerate(self.zones) if z.ua_out == 0.0]
        if len(interior) > 1:
            raise ValueError("at most one interior zone (ua_out == 0) supported")

    @property
    def interior_index(self) -> Optional[int]:
        for i, z in enumerate(self.zones):
            if z.ua_out == 0.0:
                return i
        return None


@dataclass(frozen=True, slots=True)
class PlantCommands:
    airflow_sp: tuple[float, ...]
    reheat: tuple[float, ...]
    valve_cool: float
    fan_on: bool
    oa_frac: float
    chw_setpoint: float


@dataclass(frozen=True, slots=True)
class PlantState:
    t_zone: tuple[float, ...]
    m_dot: tuple[float, ...]
    t_oa: float
    t_ra: float
    t_ma: float
    t_sa: float
    t_chw: float
    valve_cool: float
    reheat: tuple[float, ...]
    fan_on: bool
    oa_frac: float


def initial_state(params: PlantParams, t_start: float = 23.89, t_oa: float = 26.0) -> PlantState:
    n = len(params.zones)
    return PlantState(
        t_zone=(t_start,) * n,
        m_dot=(0.0,) * n,
        t_oa=t_oa,
        t_ra=t_start,
        t_ma=t_start,
        t_sa=t_start,
        t_chw=6.67,
        valve_cool=0.0,
        reheat=(0.0,) * n,
        fan_on=False,
        oa_frac=0.0,
    )


def zone_derivative(
    t_zone: float,
    t_interior: float,
    t_supply: float,
    t_oa: float,
    q_int: float,
    m_dot: float,
    z: ZoneParams,
) -> float:
    """dT/dt of one zone node in K/s."""
    q = (
        z.ua_out * (t_oa - t_zone)
        + z.ua_core * (t_interior - t_zone)
        + q_int
        + m_dot * CP_AIR * (t_supply - t_zone)
    )
    return q / z.c_z


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def _coil_outlet(t_ma: float, valve: float, t_chw: float, p: PlantParams) -> float:
    t_sa_min = t_chw + p.coil_approach
    entering = t_ma + p.dt_fan
    return entering - valve * (entering - t_sa_min)


def step_physics(
    state: PlantState,
    cmd: PlantCommands,
    t_oa: float,
    occupied: bool,
    params: PlantParams,
    dt: float = 1.0,
) -> PlantState:
    zones = params.zones
    n = len(zones)
    if len(cmd.airflow_sp) != n or len(cmd.reheat) != n:
        raise ValueError("command vectors must match zone count")

    valve = _clamp(cmd.valve_cool, 0.0, 1.0)
    oa_frac = _clamp(cmd.oa_frac, 0.0, 1.0)
    reheat = tuple(_clamp(r, 0.0, 1.0) for r in cmd.reheat)
    fan_on = bool(cmd.fan_on)

    # airflow actuators: first-order lag toward setpoint, toward 0 if fan off
    m_dot = []
    for i, z in enumerate(zones):
        target = _clamp(cmd.airflow_sp[i], 0.0, z.v_cool_max) if fan_on else 0.0
        m = state.m_dot[i] + dt * (target - state.m_dot[i]) / params.tau_actuator
        m_dot.append(_clamp(m, 0.0, z.v_cool_max))
    m_dot = tuple(m_dot)
    total_flow = sum(m_dot)

    # return/mixed air
    if total_flow > 1e-9:
        t_ra = sum(m * t for m, t in zip(m_dot, state.t_zone)) / total_flow
    else:
        t_ra = sum(state.t_zone) / n
    if fan_on:
        t_ma = oa_frac * t_oa + (1.0 - oa_frac) * t_ra
        # chilled-water temperature rises once the coil load exceeds capacity
        t_sa = _coil_outlet(t_ma, valve, cmd.chw_setpoint, params)
        q_coil = total_flow * CP_AIR * (t_ma + params.dt_fan - t_sa)
        if q_coil > params.chiller_capacity_w:
            t_chw = cmd.chw_setpoint + (
                (q_coil - params.chiller_capacity_w) / params.chw_slope_w_per_k
            )
            t_sa = _coil_outlet(t_ma, valve, t_chw, params)
        else:
            t_chw = cmd.chw_setpoint
    else:
        t_ma = t_ra
        t_sa = t_ma  # no fan heat, coil inactive
        t_chw = cmd.chw_setpoint

    interior_idx = params.interior_index
    t_int = state.t_zone[interior_idx] if interior_idx is not None else sum(state.t_zone) / n

    t_zone = []
    for i, z in enumerate(zones):
        q_int = z.q_occ if occupied else z.q_unocc
        t_supply = t_sa + reheat[i] * params.dt_reheat_max
        dT = zone_derivative(state.t_zone[i], t_int, t_supply, t_oa, q_int, m_dot[i], z)
        if i == interior_idx:
            # mirrored couplings from every perimeter zone
            dT += sum(
                zp.ua_core * (state.t_zone[j] - state.t_zone[i])
                for j, zp in enumerate(zones)
                if j != i
            ) / z.c_z
        t_zone.append(state.t_zone[i] + dt * dT)

    new = PlantState(
        t_zone=tuple(t_zone),
        m_dot=m_dot,
        t_oa=t_oa,
        t_ra=t_ra,
        t_ma=t_ma,
        t_sa=t_sa,
        t_chw=t_chw,
        valve_cool=valve,
        reheat=reheat,
        fan_on=fan_on,
        oa_frac=oa_frac,
    )
    for name in ("t_zone", "m_dot"):
        for v in getattr(new, name):
            if not math.isfinite(v):
                raise PlantFault(f"non-finite {name}")
    for t in new.t_zone:
        if not -40.0 <= t <= 60.0:
            raise PlantFault(f"zone temperature {t:.2f} degC outside [-40, 60]")
    return new


# --- measurements ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class MeasurementSet:
    t_zone: tuple[float, ...]
    m_dot: tuple[float, ...]
    t_oa: float
    t_ra: float
    t_ma: float
    t_sa: float
    t_chw: float
    valve_cool: float
    oa_frac: float
    fan_on: bool


class SensorNoise:
    """Zero-mean Gaussian overlay, deterministic per (sensor label, time).

    Seeding each draw from (seed, label, time) instead of a sequential stream
    keeps baseline and attack runs bit-aligned: a run that sends different
    traffic still sees identical sensor noise, so trend diffs are physical.
    """

    def __init__(self, seed: str | int, sigma: float = 0.05):
        self.seed = seed
        self.sigma = sigma

    def read(self, label: str, value: float, t_us: int) -> float:
        if self.sigma <= 0.0:
            return value
        return value + random.Random(f"{self.seed}:noise:{label}:{t_us}").gauss(0.0, self.sigma)


def measurement_snapshot(
    state: PlantState, noise: Optional[SensorNoise] = None, t_us: int = 0
) -> MeasurementSet:
    """Project the state to sensor values, optionally with seeded noise."""
    if noise is None:
        return MeasurementSet(
            t_zone=state.t_zone,
            m_dot=state.m_dot,
            t_oa=state.t_oa,
            t_ra=state.t_ra,
            t_ma=state.t_ma,
            t_sa=state.t_sa,
            t_chw=state.t_chw,
            valve_cool=state.valve_cool,
            oa_frac=state.oa_frac,
            fan_on=state.fan_on,
        )
    return MeasurementSet(
        t_zone=tuple(
            noise.read(f"zone{i}.t", t, t_us) for i, t in enumerate(state.t_zone)
        ),
        m_dot=tuple(
            noise.read(f"zone{i}.flow", m, t_us) for i, m in enumerate(state.m_dot)
        ),
        t_oa=noise.read("ahu.t_oa", state.t_oa, t_us),
        t_ra=noise.read("ahu.t_ra", state.t_ra, t_us),
        t_ma=noise.read("ahu.t_ma", state.t_ma, t_us),
        t_sa=noise.read("ahu.t_sa", state.t_sa, t_us),
        t_chw=noise.read("chiller.t_chw", state.t_chw, t_us),
        valve_cool=state.valve_cool,
        oa_frac=state.oa_frac,
        fan_on=state.fan_on,
    )


# --- weather -----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class WeatherSeries:
    """Hourly (hour-of-year, degC) samples with linear interpolation."""

    samples: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        hours = [h for h, _ in self.samples]
        if not hours:
            raise WeatherError("weather series is empty")
        if any(b <= a for a, b in zip(hours, hours[1:])):
            raise WeatherError("weather timestamps must be strictly increasing")

    def at(self, hour: float) -> float:
        s = self.samples
        if hour <= s[0][0]:
            return s[0][1]
        if hour >= s[-1][0]:
            return s[-1][1]
        for (h0, t0), (h1, t1) in zip(s, s[1:]):
            if h0 <= hour <= h1:
                return t0 + (t1 - t0) * (hour - h0) / (h1 - h0)
        raise AssertionError("unreachable")

    def check_covers(self, start_hour: float, duration_h: float) -> None:
        # hourly data may stop at the day's last sample; holding the final
        # value across the closing hour is acceptable, a larger gap is not
        if self.samples[0][0] > start_hour or self.samples[-1][0] < start_hour + duration_h - 1.0:
            raise WeatherError(
                f"weather covers [{self.samples[0][0]}, {self.samples[-1][0]}] h, "
                f"run needs [{start_hour}, {start_hour + duration_h}] h"
            )


def synthetic_outdoor_temp(hour: float) -> float:
    """Warm-day diurnal curve: 26 degC at 09:00, peaking 32 degC at 15:00."""
    return 26.0 + 6.0 * math.sin(2.0 * math.pi * ((hour % 24.0) - 9.0) / 24.0)


def load_weather(
    source: str | Path, start_hour: float = 0.0, duration_h: float = 24.0
) -> WeatherSeries:
    """Build the series from a CSV (`hour,t_out_c`) or the synthetic curve."""
    if str(source) == "synthetic":
        base = math.floor(start_hour)
        hours = range(int(base), int(base + duration_h) + 1)
        series = WeatherSeries(tuple((float(h), synthetic_outdoor_temp(h)) for h in hours))
        series.check_covers(start_hour, duration_h)
        return series
    samples = []
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise WeatherError(f"cannot read weather file {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != ["hour", "t_out_c"]:
        raise WeatherError(f"{path}: first row must be the header 'hour,t_out_c'")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise WeatherError(f"{path}: row {lineno}: expected 2 columns, got {len(row)}")
        try:
            samples.append((float(row[0]), float(row[1])))
        except ValueError as exc:
            raise WeatherError(f"{path}: row {lineno}: non-numeric value") from exc
    series = WeatherSeries(tuple(samples))
    series.check_covers(start_hour, duration_h)
    return series
