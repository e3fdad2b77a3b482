"""Scenario files: parsing, validation, resolution, and weather input.

The on-disk format is a small TOML-compatible subset: ``key = value`` lines,
``[table]`` sections, ``[[attacks]]`` array-of-tables, quoted strings,
numbers, booleans, bare ISO dates, and single-line arrays.  No stdlib TOML
reader exists on this interpreter, so the subset is parsed here; every
diagnostic carries the offending line number.

A parsed document resolves against defaults into a ScenarioConfig.  The
resolved form re-emits as text that parses back to the identical config,
which is what lands in a run bundle as ``scenario.resolved``.
"""

from __future__ import annotations

import calendar
import re
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

from .attacks import (
    AttackError,
    AttackSpec,
    DosSpec,
    FdiSpec,
    RogueRegisterSpec,
    parse_clock_s,
    spec_from_dict,
    validate_attacks,
)
from .bacnet.apdu import REINIT_WARMSTART
from .plant import WeatherError, WeatherSeries, load_weather


class ConfigError(ValueError):
    """Scenario rejected; ``line`` is 1-based when the source line is known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


# --- document parser -----------------------------------------------------------

_BARE_KEY = re.compile(r"^[A-Za-z0-9_-]+$")
_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")

Scalar = Union[str, int, float, bool]


def _strip_comment(raw: str) -> str:
    in_string = False
    for i, ch in enumerate(raw):
        if ch == '"' and (i == 0 or raw[i - 1] != "\\"):
            in_string = not in_string
        elif ch == "#" and not in_string:
            return raw[:i]
    return raw


def _parse_string(text: str, line: int) -> str:
    if len(text) < 2 or not text.endswith('"') or text[-2:] == '\\"':
        raise ConfigError(f"unterminated string: {text}", line)
    out, i = [], 1
    while i < len(text) - 1:
        ch = text[i]
        if ch == "\\":
            i += 1
            escapes = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}
            if i >= len(text) - 1 or text[i] not in escapes:
                raise ConfigError(f"bad escape in string: {text}", line)
            out.append(escapes[text[i]])
        elif ch == '"':
            raise ConfigError(f"text after closing quote: {text}", line)
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def _split_array(body: str, line: int) -> list[str]:
    items, depth, start, in_string = [], 0, 0, False
    for i, ch in enumerate(body):
        if ch == '"' and (i == 0 or body[i - 1] != "\\"):
            in_string = not in_string
        elif not in_string and ch == "[":
            depth += 1
        elif not in_string and ch == "]":
            depth -= 1
        elif not in_string and ch == "," and depth == 0:
            items.append(body[start:i])
            start = i + 1
    if in_string:
        raise ConfigError(f"unterminated string in array: [{body}]", line)
    items.append(body[start:])
    return [s.strip() for s in items if s.strip()]


def _parse_value(text: str, line: int) -> Union[Scalar, list]:
    if text.startswith('"'):
        return _parse_string(text, line)
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"unterminated array: {text}", line)
        return [_parse_value(item, line) for item in _split_array(text[1:-1], line)]
    if text == "true":
        return True
    if text == "false":
        return False
    if _DATE.match(text):
        return text  # bare dates stay textual
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    raise ConfigError(f"unparseable value: {text!r}", line)


def parse_document(text: str) -> tuple[dict, dict[str, int]]:
    """Parse the config subset; also return a key-path -> line-number map."""
    root: dict = {}
    lines: dict[str, int] = {}
    current: dict = root
    prefix = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(raw).strip()
        if not stripped:
            continue
        if stripped.startswith("[["):
            if not stripped.endswith("]]"):
                raise ConfigError(f"malformed table header: {stripped}", lineno)
            name = stripped[2:-2].strip()
            if not _BARE_KEY.match(name):
                raise ConfigError(f"bad table name: {name!r}", lineno)
            seq = root.setdefault(name, [])
            if not isinstance(seq, list):
                raise ConfigError(f"{name!r} is already a non-array key", lineno)
            current = {}
            seq.append(current)
            prefix = f"{name}[{len(seq) - 1}]."
            lines[prefix[:-1]] = lineno
        elif stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed table header: {stripped}", lineno)
            name = stripped[1:-1].strip()
            if not _BARE_KEY.match(name):
                raise ConfigError(f"bad table name: {name!r}", lineno)
            if name in root:
                raise ConfigError(f"duplicate table [{name}]", lineno)
            current = root[name] = {}
            prefix = name + "."
            lines[name] = lineno
        else:
            key, eq, rest = stripped.partition("=")
            if not eq:
                raise ConfigError(f"expected key = value, got: {stripped}", lineno)
            key = key.strip()
            if not _BARE_KEY.match(key):
                raise ConfigError(f"bad key: {key!r}", lineno)
            if key in current:
                raise ConfigError(f"duplicate key {key!r}", lineno)
            current[key] = _parse_value(rest.strip(), lineno)
            lines[prefix + key] = lineno
    return root, lines


# --- resolved configuration -------------------------------------------------------

DEFAULT_DATE = "2021-08-01"


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully-resolved experiment description; all times SI seconds."""

    name: str = "baseline"
    date: str = DEFAULT_DATE
    duration_s: float = 86_400.0
    seed: str = "42"
    speed: Optional[float] = None  # None means as fast as possible
    weather: str = "synthetic"

    ip_base_latency_s: float = 0.002
    ip_jitter_s: float = 0.001
    field_base_latency_s: float = 0.004
    field_jitter_s: float = 0.002

    occupied_start_s: float = 25_200.0  # 07:00
    occupied_end_s: float = 72_000.0  # 20:00

    poll_interval_s: float = 60.0
    poll_timeout_s: float = 3.0
    dispatch_period_s: float = 300.0

    # plant envelope: four perimeter zones plus one interior zone
    c_z: float = 6.0e6
    ua_out: float = 200.0
    ua_core: float = 50.0
    q_occ: float = 1500.0
    q_unocc: float = 600.0
    q_unocc_interior: float = 150.0
    v_min: float = 0.08
    v_cool_max: float = 1.5
    chiller_capacity_w: float = 140_000.0
    sensor_sigma_k: float = 0.05
    t_start_c: float = 23.89

    vav_kp: float = 0.3
    vav_ki: float = 0.005
    ahu_kp: float = 0.1
    ahu_ki: float = 0.01

    attacks: tuple[AttackSpec, ...] = ()

    @property
    def epoch_s(self) -> int:
        """The scenario date at 00:00 UTC, used to anchor pcap timestamps."""
        parsed = time.strptime(self.date, "%Y-%m-%d")
        return calendar.timegm(parsed)

    @property
    def speed_label(self) -> str:
        return "max" if self.speed is None else repr(self.speed)


_TABLES = {
    "latency": {
        "ip_base_s": "ip_base_latency_s",
        "ip_jitter_s": "ip_jitter_s",
        "field_base_s": "field_base_latency_s",
        "field_jitter_s": "field_jitter_s",
    },
    "schedule": {
        "occupied_start": "occupied_start_s",
        "occupied_end": "occupied_end_s",
    },
    "server": {
        "poll_interval_s": "poll_interval_s",
        "poll_timeout_s": "poll_timeout_s",
        "dispatch_period_s": "dispatch_period_s",
    },
    "plant": {
        "c_z": "c_z",
        "ua_out": "ua_out",
        "ua_core": "ua_core",
        "q_occ": "q_occ",
        "q_unocc": "q_unocc",
        "q_unocc_interior": "q_unocc_interior",
        "v_min": "v_min",
        "v_cool_max": "v_cool_max",
        "chiller_capacity_w": "chiller_capacity_w",
        "sensor_sigma_k": "sensor_sigma_k",
        "t_start_c": "t_start_c",
    },
    "control": {
        "vav_kp": "vav_kp",
        "vav_ki": "vav_ki",
        "ahu_kp": "ahu_kp",
        "ahu_ki": "ahu_ki",
    },
}

_TOP_KEYS = ("name", "date", "duration_s", "seed", "speed", "weather")

_POSITIVE = {
    "duration_s", "poll_interval_s", "poll_timeout_s", "dispatch_period_s",
    "c_z", "v_cool_max", "chiller_capacity_w",
}


def _as_number(value, path: str, lines: dict) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number", lines.get(path))
    return float(value)


def resolve(data: dict, lines: Optional[dict] = None,
            default_name: str = "scenario") -> ScenarioConfig:
    """Validate a parsed document and fill in every default."""
    lines = lines or {}
    known_fields = {f.name for f in fields(ScenarioConfig)}
    values: dict = {}

    for key in data:
        if key not in _TOP_KEYS and key not in _TABLES and key != "attacks":
            raise ConfigError(f"unknown key {key!r}", lines.get(key))

    name = data.get("name", default_name)
    if not isinstance(name, str) or not name:
        raise ConfigError("name must be a non-empty string", lines.get("name"))
    values["name"] = name

    date = data.get("date", DEFAULT_DATE)
    try:
        time.strptime(date, "%Y-%m-%d")
    except (TypeError, ValueError):
        raise ConfigError(f"date must be YYYY-MM-DD, got {date!r}",
                          lines.get("date")) from None
    values["date"] = date

    if "duration_s" in data:
        duration = _as_number(data["duration_s"], "duration_s", lines)
        if duration <= 0:
            raise ConfigError("duration_s must be positive", lines.get("duration_s"))
        values["duration_s"] = duration

    seed = data.get("seed", "42")
    if isinstance(seed, bool) or not isinstance(seed, (str, int)):
        raise ConfigError("seed must be a string or integer", lines.get("seed"))
    values["seed"] = str(seed)

    speed = data.get("speed", "max")
    if speed == "max":
        values["speed"] = None
    else:
        speed = _as_number(speed, "speed", lines)
        if speed <= 0:
            raise ConfigError("speed must be positive", lines.get("speed"))
        values["speed"] = speed

    weather = data.get("weather", "synthetic")
    if not isinstance(weather, str) or not weather:
        raise ConfigError("weather must be 'synthetic' or a CSV path",
                          lines.get("weather"))
    values["weather"] = weather

    for table, mapping in _TABLES.items():
        section = data.get(table, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{table}] must be a table", lines.get(table))
        for key, value in section.items():
            target = mapping.get(key)
            if target is None:
                raise ConfigError(f"unknown key {key!r} in [{table}]",
                                  lines.get(f"{table}.{key}"))
            path = f"{table}.{key}"
            if table == "schedule":
                try:
                    number = parse_clock_s(value)
                except AttackError as exc:
                    raise ConfigError(str(exc), lines.get(path)) from None
            else:
                number = _as_number(value, path, lines)
            if target in _POSITIVE and number <= 0:
                raise ConfigError(f"{path} must be positive", lines.get(path))
            if target not in _POSITIVE and number < 0:
                raise ConfigError(f"{path} must not be negative", lines.get(path))
            assert target in known_fields
            values[target] = number

    start = values.get("occupied_start_s", 25_200.0)
    end = values.get("occupied_end_s", 72_000.0)
    if not 0 <= start < end <= 86_400:
        raise ConfigError("occupied window must satisfy 0 <= start < end <= 24h",
                          lines.get("schedule"))

    raw_attacks = data.get("attacks", [])
    if not isinstance(raw_attacks, list):
        raise ConfigError("attacks must be declared as [[attacks]] tables",
                          lines.get("attacks"))
    specs: list[AttackSpec] = []
    for i, raw in enumerate(raw_attacks):
        table_line = lines.get(f"attacks[{i}]")
        if not isinstance(raw, dict):
            raise ConfigError("attacks must be declared as [[attacks]] tables",
                              table_line)
        try:
            spec = spec_from_dict(raw)
        except AttackError as exc:
            raise ConfigError(str(exc), table_line) from None
        if spec.attack_id is None:
            spec = replace(spec, attack_id=f"{spec.kind}-{i}")
        if any(s.attack_id == spec.attack_id for s in specs):
            raise ConfigError(f"duplicate attack id {spec.attack_id!r}", table_line)
        specs.append(spec)
    duration = values.get("duration_s", 86_400.0)
    try:
        validate_attacks(specs, duration)
    except AttackError as exc:
        raise ConfigError(str(exc), lines.get("attacks[0]")) from None
    values["attacks"] = tuple(specs)

    return ScenarioConfig(**values)


def parse_scenario_text(text: str, default_name: str = "scenario") -> ScenarioConfig:
    data, lines = parse_document(text)
    return resolve(data, lines, default_name=default_name)


def parse_scenario(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    return parse_scenario_text(text, default_name=p.stem)


# --- resolved emission ------------------------------------------------------------

def _emit_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    escaped = value.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def _attack_table(spec: AttackSpec) -> list[tuple[str, Scalar]]:
    rows: list[tuple[str, Scalar]] = [("kind", spec.kind)]
    if isinstance(spec, FdiSpec):
        rows += [("target_point", spec.target_point), ("value", spec.value),
                 ("start", spec.start_s), ("end", spec.end_s), ("via", spec.via),
                 ("rewrite_period", spec.rewrite_period_s),
                 ("priority", spec.priority)]
    elif isinstance(spec, DosSpec):
        state = "warmstart" if spec.reinit_state == REINIT_WARMSTART else "coldstart"
        rows += [("target_device", spec.target_device), ("start", spec.start_s),
                 ("end", spec.end_s), ("rate", spec.rate_hz),
                 ("reinit_state", state)]
    else:
        assert isinstance(spec, RogueRegisterSpec)
        rows += [("start", spec.start_s), ("end", spec.end_s), ("ttl", spec.ttl_s)]
    rows.append(("id", spec.attack_id))
    return rows


def emit_resolved(cfg: ScenarioConfig) -> str:
    """Render the config as text that parses back to an equal config."""
    out = []
    out.append(f"name = {_emit_scalar(cfg.name)}")
    out.append(f"date = {_emit_scalar(cfg.date)}")
    out.append(f"duration_s = {_emit_scalar(cfg.duration_s)}")
    out.append(f"seed = {_emit_scalar(cfg.seed)}")
    out.append(f"speed = {_emit_scalar('max' if cfg.speed is None else cfg.speed)}")
    out.append(f"weather = {_emit_scalar(cfg.weather)}")
    for table, mapping in _TABLES.items():
        out.append("")
        out.append(f"[{table}]")
        for key, attr in mapping.items():
            out.append(f"{key} = {_emit_scalar(getattr(cfg, attr))}")
    for spec in cfg.attacks:
        out.append("")
        out.append("[[attacks]]")
        for key, value in _attack_table(spec):
            out.append(f"{key} = {_emit_scalar(value)}")
    return "\n".join(out) + "\n"


# --- weather ----------------------------------------------------------------------

def day_start_hour(date: str) -> float:
    """Hour-of-year at the scenario date's midnight (Aug 1 -> 5088)."""
    return float((time.strptime(date, "%Y-%m-%d").tm_yday - 1) * 24)


def load_scenario_weather(cfg: ScenarioConfig) -> tuple[WeatherSeries, float]:
    """Load the run's weather and its hour-of-year offset.

    Weather problems are configuration problems as far as the CLI is
    concerned, so they surface as ConfigError.
    """
    start = day_start_hour(cfg.date)
    try:
        series = load_weather(cfg.weather, start, cfg.duration_s / 3600.0)
    except WeatherError as exc:
        raise ConfigError(str(exc)) from None
    return series, start
