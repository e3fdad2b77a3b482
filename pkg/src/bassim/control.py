"""Control primitives shared by the field controllers.

PiLoop uses conditional integration for anti-windup: the integrator freezes
whenever the unsaturated output would sit outside the limits AND the current
error would push it further out.  On an error sign flip the output therefore
leaves saturation within one step of the unsaturated control law.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class PiLoop:
    kp: float
    ki: float
    out_min: float = 0.0
    out_max: float = 1.0
    integral: float = 0.0

    def step(self, error: float, dt: float) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        provisional = self.kp * error + self.ki * (self.integral + error * dt)
        pushing_high = provisional > self.out_max and error > 0
        pushing_low = provisional < self.out_min and error < 0
        if not (pushing_high or pushing_low):
            self.integral += error * dt
        out = self.kp * error + self.ki * self.integral
        return min(self.out_max, max(self.out_min, out))


@dataclass(frozen=True, slots=True)
class DailySchedule:
    """Occupied window in seconds-of-day, repeating every day."""

    occupied_start_s: int = 7 * 3600
    occupied_end_s: int = 20 * 3600

    def __post_init__(self) -> None:
        if not 0 <= self.occupied_start_s < self.occupied_end_s <= 86_400:
            raise ValueError("schedule requires 0 <= start < end <= 24h")

    def is_occupied(self, sim_time_s: float) -> bool:
        sod = sim_time_s % 86_400.0
        return self.occupied_start_s <= sod < self.occupied_end_s


@dataclass(frozen=True, slots=True)
class ZoneSetpoints:
    """Occupied/unoccupied zone air setpoints in degC (75/70, 85/60 degF)."""

    cool_occ: float = 23.89
    heat_occ: float = 21.11
    cool_unocc: float = 29.44
    heat_unocc: float = 15.56

    def __post_init__(self) -> None:
        if self.heat_occ > self.cool_occ - 1.0 or self.heat_unocc > self.cool_unocc - 1.0:
            raise ValueError("heating setpoint must sit >= 1 K below cooling")
