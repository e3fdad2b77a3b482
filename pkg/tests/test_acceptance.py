"""Acceptance gate: one pass/fail line per shipped guarantee.

Each test is a complete criterion, so a ``pytest -v`` run of this file
reads as the release checklist.  The shipped scenarios are executed in
full (24 h days at unpaced speed) by a module fixture and shared across
criteria; reruns of the same configurations back the determinism check.
All thresholds are duplicated here on purpose: the gate must not inherit
constants from the code it judges.
"""

import csv
import json
import string
import struct
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from random import Random

import pytest

import pcap_oracle
from bassim.bacnet import (
    AppValue,
    ComplexAck,
    DecodeError,
    DistributeBroadcast,
    ErrorPdu,
    IAmRequest,
    Npdu,
    ObjectId,
    ObjectType,
    OriginalBroadcast,
    OriginalUnicast,
    ForwardedNpdu,
    ReadPropertyAck,
    RegisterForeignDevice,
    RejectPdu,
    ResultFrame,
    SimpleAck,
    UnconfirmedRequest,
    WhoIsRequest,
    build_read_property,
    build_reinitialize,
    build_who_is,
    build_write_property,
    decode_frame,
    encode_apdu,
    encode_frame,
)
from bassim.bacnet.apdu import SERVICE_READ_PROPERTY, SERVICE_WHO_IS
from bassim.plant import (
    PlantCommands,
    PlantParams,
    ZoneParams,
    initial_state,
    step_physics,
)
from bassim.runner import run
from bassim.scenario import parse_scenario

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

ZONE_TEMPS = tuple(f"vav{i}.analog-input:1" for i in range(1, 6))
AHU_POINTS = ("ahu.analog-input:1", "ahu.analog-value:1",
              "ahu.analog-output:1", "ahu.analog-output:2")
SAT_MEASURED = "ahu.analog-input:1"
SAT_SETPOINT = "ahu.analog-value:1"

H = 3600.0
FDI_WINDOW = (10 * H, 11 * H)
DOS_WINDOW = (10 * H, 11.5 * H)
DISPATCH_PERIOD_S = 300.0

SERVER_IP = "10.13.254.2"
ROUTER_IP = "10.13.254.5"
ATTACKER_IP = "10.13.254.99"


# -- shared full-day bundles ----------------------------------------------------


def load_trends(bundle_dir) -> dict[str, list[tuple[float, float, str]]]:
    """trends.csv as {point: [(t, value_or_None, quality), ...]}."""
    out: dict[str, list] = {}
    with open(Path(bundle_dir) / "trends.csv", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        assert next(reader) == ["sim_time_s", "point", "value", "quality"]
        for t, point, value, quality in reader:
            out.setdefault(point, []).append(
                (float(t), float(value) if value else None, quality))
    return out


def deviations(base, attack, point, lo=None, hi=None):
    """|attack - base| rows for one point, optionally clipped to [lo, hi)."""
    rows = []
    for (t, bv, _), (ta, av, _) in zip(base[point], attack[point]):
        assert t == ta, "bundles must be row-aligned"
        if lo is not None and not lo <= t:
            continue
        if hi is not None and not t < hi:
            continue
        if bv is not None and av is not None:
            rows.append((t, av - bv))
    return rows


@pytest.fixture(scope="module")
def bundles(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    out = {"root": root}

    baseline_cfg = parse_scenario(SCENARIO_DIR / "baseline.toml")
    t0 = time.monotonic()
    out["baseline"] = run(baseline_cfg, root / "baseline")
    out["baseline_wall_s"] = time.monotonic() - t0
    out["baseline_rerun"] = run(baseline_cfg, root / "baseline-rerun")

    fdi_cfg = parse_scenario(SCENARIO_DIR / "fdi.toml")
    out["fdi"] = run(fdi_cfg, root / "fdi")
    out["fdi_rerun"] = run(fdi_cfg, root / "fdi-rerun")

    dos_cfg = parse_scenario(SCENARIO_DIR / "dos.toml")
    out["dos"] = run(dos_cfg, root / "dos")
    out["dos_rerun"] = run(dos_cfg, root / "dos-rerun")
    out["dos_cfg"] = dos_cfg

    trickle_cfg = replace(
        dos_cfg, name="dos-trickle",
        attacks=(replace(dos_cfg.attacks[0], rate_hz=0.05),))
    out["trickle"] = run(trickle_cfg, root / "dos-trickle")
    return out


# -- criterion 1: wire format ---------------------------------------------------


_OBJECT_TYPES = list(ObjectType)


def _rand_value(rng: Random) -> AppValue:
    kind = rng.randrange(7)
    if kind == 0:
        return AppValue.null()
    if kind == 1:
        return AppValue.boolean(rng.random() < 0.5)
    if kind == 2:
        return AppValue.unsigned(rng.randrange(1 << 32))
    if kind == 3:
        return AppValue.signed(rng.randrange(-(1 << 31), 1 << 31))
    if kind == 4:
        # quantize to f32 so the decoded value can compare equal
        f32 = struct.unpack(">f", struct.pack(">f", rng.uniform(-1e6, 1e6)))[0]
        return AppValue.real(f32)
    if kind == 5:
        return AppValue.enumerated(rng.randrange(1 << 16))
    text = "".join(rng.choices(string.ascii_letters, k=rng.randrange(24)))
    return AppValue.char_string(text)


def _rand_oid(rng: Random) -> ObjectId:
    return ObjectId(rng.choice(_OBJECT_TYPES), rng.randrange(1 << 22))


def _rand_npdu(rng: Random) -> Npdu:
    dnet = dadr = hop = None
    if rng.random() < 0.5:
        dnet = 0xFFFF if rng.random() < 0.3 else rng.randrange(1, 0xFFFF)
        if dnet != 0xFFFF and rng.random() < 0.5:
            dadr = rng.randbytes(rng.randrange(1, 7))
        hop = rng.randrange(256)
    snet = sadr = None
    if rng.random() < 0.5:
        snet = rng.randrange(0xFFFF)
        sadr = rng.randbytes(rng.randrange(1, 7))
    return Npdu(expects_reply=rng.random() < 0.5, priority=rng.randrange(4),
                dnet=dnet, dadr=dadr, snet=snet, sadr=sadr, hop_count=hop)


def _rand_apdu(rng: Random):
    kind = rng.randrange(9)
    invoke = rng.randrange(256)
    if kind == 0:
        return build_read_property(_rand_oid(rng), rng.randrange(1 << 22), invoke)
    if kind == 1:
        priority = rng.choice([None, rng.randrange(1, 17)])
        return build_write_property(_rand_oid(rng), rng.randrange(1 << 22),
                                    _rand_value(rng), invoke, priority=priority)
    if kind == 2:
        password = rng.choice([None, "pw" + str(rng.randrange(1000))])
        return build_reinitialize(rng.randrange(2), invoke, password=password)
    if kind == 3:
        body = WhoIsRequest() if rng.random() < 0.5 else WhoIsRequest(
            rng.randrange(1 << 22), rng.randrange(1 << 22))
        return UnconfirmedRequest(SERVICE_WHO_IS, body)
    if kind == 4:
        body = IAmRequest(_rand_oid(rng), rng.randrange(1 << 16),
                          rng.randrange(4), rng.randrange(1 << 16))
        return UnconfirmedRequest(0, body)
    if kind == 5:
        return SimpleAck(invoke, rng.randrange(256))
    if kind == 6:
        ack = ReadPropertyAck(_rand_oid(rng), rng.randrange(1 << 22), _rand_value(rng))
        return ComplexAck(invoke, SERVICE_READ_PROPERTY, ack)
    if kind == 7:
        return ErrorPdu(invoke, rng.randrange(256),
                        rng.randrange(1 << 16), rng.randrange(1 << 16))
    return RejectPdu(invoke, rng.randrange(256))


def _rand_frame(rng: Random):
    kind = rng.randrange(6)
    if kind == 0:
        return ResultFrame(rng.choice([0x0000, 0x0030]))
    if kind == 1:
        return RegisterForeignDevice(rng.randrange(1 << 16))
    npdu, apdu = _rand_npdu(rng), _rand_apdu(rng)
    if kind == 2:
        return OriginalUnicast(npdu, apdu)
    if kind == 3:
        return OriginalBroadcast(npdu, apdu)
    if kind == 4:
        return DistributeBroadcast(npdu, apdu)
    origin = ".".join(str(rng.randrange(256)) for _ in range(4))
    return ForwardedNpdu(origin, rng.randrange(1 << 16), npdu, apdu)


def test_c1_codec_golden_vectors_roundtrip_and_fuzz():
    started = time.monotonic()

    def hx(s: str) -> bytes:
        return bytes.fromhex(s.replace(" ", ""))

    assert encode_frame(OriginalBroadcast(Npdu(), build_who_is())) \
        == hx("81 0B 00 08 01 00 10 08")
    assert encode_apdu(build_read_property(
        ObjectId(ObjectType.ANALOG_VALUE, 1), 85, 1)) \
        == hx("00 05 01 0C 0C 00 80 00 01 19 55")
    assert encode_apdu(build_reinitialize(1, 2)) == hx("00 05 02 14 09 01")

    rng = Random("acceptance-c1")
    for _ in range(10_000):
        frame = _rand_frame(rng)
        assert decode_frame(encode_frame(frame)) == frame

    base = bytearray(encode_frame(OriginalUnicast(
        Npdu(expects_reply=True),
        build_write_property(ObjectId(ObjectType.ANALOG_VALUE, 1), 85,
                             AppValue.real(35.0), 3))))
    for i in range(100_000):
        if i % 2:
            blob = rng.randbytes(rng.randrange(64))
        else:
            flipped = bytearray(base)
            for _ in range(rng.randrange(1, 5)):
                flipped[rng.randrange(len(flipped))] ^= 1 << rng.randrange(8)
            blob = bytes(flipped)
        try:
            decode_frame(blob)
        except DecodeError:
            pass  # typed rejection is the contract; anything else fails the gate
    assert time.monotonic() - started < 10.0


# -- criterion 2: thermal model oracles -----------------------------------------


def _settle(zone: ZoneParams, cmd: PlantCommands, t_oa: float, occupied: bool,
            t_start: float, seconds: int):
    params = PlantParams(zones=(zone,))
    state = initial_state(params, t_start=t_start, t_oa=t_oa)
    for _ in range(seconds):
        state = step_physics(state, cmd, t_oa, occupied, params)
    return state


def test_c2_thermal_model_matches_analytic_oracles():
    idle = PlantCommands(airflow_sp=(0.0,), reheat=(0.0,), valve_cool=0.0,
                         fan_on=False, oa_frac=0.0, chw_setpoint=6.67)
    small = ZoneParams(c_z=2.0e5, ua_out=200.0, ua_core=0.0,
                       q_occ=1000.0, q_unocc=0.0, v_min=0.0, v_cool_max=1.5)

    # algebraic balance, no airflow: T = T_oa + Q/UA
    state = _settle(small, idle, t_oa=30.0, occupied=True, t_start=20.0,
                    seconds=15_000)
    assert abs(state.t_zone[0] - (30.0 + 1000.0 / 200.0)) <= 0.01

    # balance with supply air at 12.78 degC and m*cp = 0.5*1006 = 503 W/K;
    # valve 1.0 pins the coil outlet to chw + 2 K approach = 12.78 exactly
    cooling = PlantCommands(airflow_sp=(0.5,), reheat=(0.0,), valve_cool=1.0,
                            fan_on=True, oa_frac=0.0, chw_setpoint=10.78)
    expected = (200.0 * 30.0 + 1000.0 + 503.0 * 12.78) / (200.0 + 503.0)
    assert round(expected, 2) == 19.10
    state = _settle(small, cooling, t_oa=30.0, occupied=True, t_start=20.0,
                    seconds=15_000)
    assert abs(state.t_zone[0] - expected) <= 0.01

    # step response within 1 % of the exponential at t = tau = C/UA = 1000 s
    tau = int(small.c_z / small.ua_out)
    state = _settle(small, idle, t_oa=30.0, occupied=False, t_start=20.0,
                    seconds=tau)
    analytic = 30.0 + (20.0 - 30.0) * 2.718281828459045 ** -1.0
    assert abs(state.t_zone[0] - analytic) <= 0.01 * 10.0


# -- criterion 3: baseline day ---------------------------------------------------


def test_c3_baseline_day_clean_comfortable_and_fast(bundles):
    summary = bundles["baseline"]
    for point, stats in summary["points"].items():
        assert stats["missing"] == 0, f"{point} has missing rows in the baseline"
    assert summary["alarms"] == []

    trends = load_trends(bundles["root"] / "baseline")
    occupied_end = 20 * H
    for point in ZONE_TEMPS:
        rows = [(t, v) for t, v, _ in trends[point]
                if 8 * H <= t < occupied_end and v is not None]
        inside = sum(1 for _, v in rows if abs(v - 23.89) <= 0.5)
        assert inside / len(rows) >= 0.95, \
            f"{point} in band for only {inside}/{len(rows)} occupied minutes"

    assert bundles["baseline_wall_s"] < 60.0


# -- criterion 4: setpoint injection --------------------------------------------


def test_c4_sat_injection_magnitude_peak_and_recovery(bundles):
    base = load_trends(bundles["root"] / "baseline")
    fdi = load_trends(bundles["root"] / "fdi")
    lo, hi = FDI_WINDOW

    sat_dev = deviations(base, fdi, SAT_MEASURED, lo, hi)
    assert max(d for _, d in sat_dev) >= 10.0

    peak = max(v for point in ZONE_TEMPS
               for t, v, _ in fdi[point]
               if lo <= t <= 14 * H and v is not None)
    assert 25.0 <= peak <= 28.5

    for point in ZONE_TEMPS:
        late = deviations(base, fdi, point, 14 * H, None)
        assert late, f"no rows after 14:00 for {point}"
        worst = max(abs(d) for _, d in late)
        assert worst <= 0.5, f"{point} still {worst:.2f} K off baseline at 14:00+"

    # the supervisor's next dispatch after the window must restore the target
    restored = [t for t, v, _ in fdi[SAT_SETPOINT]
                if t >= hi and v is not None and abs(v - 12.78) < 0.01]
    assert restored and restored[0] <= hi + DISPATCH_PERIOD_S


# -- criterion 5: reboot flood ---------------------------------------------------


def _missing_fraction(trends, points, lo, hi):
    total = missing = 0
    for point in points:
        for t, _, quality in trends[point]:
            if lo <= t < hi:
                total += 1
                missing += quality == "missing"
    return missing / total


def test_c5_reboot_flood_blinds_only_the_ahu_then_recovers(bundles):
    base = load_trends(bundles["root"] / "baseline")
    dos = load_trends(bundles["root"] / "dos")
    lo, hi = DOS_WINDOW

    assert _missing_fraction(dos, AHU_POINTS, lo, hi) == 1.0
    others = [p for p in dos if p not in AHU_POINTS]
    assert _missing_fraction(dos, others, 0.0, 24 * H) == 0.0

    trickle = load_trends(bundles["root"] / "dos-trickle")
    fraction = _missing_fraction(trickle, AHU_POINTS, lo, hi)
    assert 0.0 < fraction < 1.0, f"trickle flood lost {fraction:.0%}, want partial"

    worst_in_window = max(abs(d) for point in ZONE_TEMPS
                          for _, d in deviations(base, dos, point, lo, hi))
    assert worst_in_window > 0.5, "flood left no thermal signature"
    for point in ZONE_TEMPS:
        late = deviations(base, dos, point, 15 * H, None)
        worst = max(abs(d) for _, d in late)
        assert worst <= 0.5, f"{point} still {worst:.2f} K off baseline at 15:00+"


# -- criterion 6: capture cross-checked by an independent dissector --------------


def test_c6_capture_agrees_with_independent_dissector(bundles):
    dos_dir = bundles["root"] / "dos"
    # dissect() raises on any bad ethernet/IPv4/UDP field, including the IP
    # header checksum, so a returned list is itself the checksum verdict
    packets = pcap_oracle.dissect(dos_dir / "traffic.pcap")
    assert packets, "empty capture"

    with open(dos_dir / "traffic.jsonl", encoding="utf-8") as f:
        ip_lines = sum(1 for line in f if json.loads(line)["segment"] == 1)
    assert len(packets) == ip_lines
    assert len(packets) == bundles["dos"]["traffic"]["ip_packets"]

    pairs = {(p.src_ip, p.dst_ip) for p in packets}
    assert (SERVER_IP, ROUTER_IP) in pairs and (ROUTER_IP, SERVER_IP) in pairs
    assert all(p.src_port == 47808 and p.dst_port == 47808 for p in packets)

    # capture timestamps count from UTC midnight of the scenario date
    day = datetime.strptime(bundles["dos_cfg"].date, "%Y-%m-%d")
    epoch_us = int(day.replace(tzinfo=timezone.utc).timestamp()) * 1_000_000
    flood = [p for p in packets
             if p.src_ip == ATTACKER_IP and p.dst_ip == ROUTER_IP]
    span_s = (flood[-1].ts_us - flood[0].ts_us) / 1e6
    rate = len(flood) / span_s
    spec = bundles["dos_cfg"].attacks[0]
    assert abs(rate - spec.rate_hz) <= 0.05 * spec.rate_hz

    lo, hi = DOS_WINDOW
    reinits = sum(
        1 for p in flood
        if p.service == "reinitialize-device"
        and lo <= (p.ts_us - epoch_us) / 1e6 < hi)
    expected = spec.rate_hz * (spec.end_s - spec.start_s)
    assert abs(reinits - expected) <= 1


# -- criterion 7: determinism ----------------------------------------------------


def test_c7_same_seed_reruns_are_byte_identical(bundles):
    for name in ("baseline", "fdi", "dos"):
        first, second = bundles["root"] / name, bundles["root"] / f"{name}-rerun"
        for artifact in ("trends.csv", "traffic.jsonl", "traffic.pcap"):
            a = (first / artifact).read_bytes()
            b = (second / artifact).read_bytes()
            assert a == b, f"{name}/{artifact} differs between identical runs"
