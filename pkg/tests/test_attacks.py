"""Attack engine: spec parsing/validation, FDI paths, DoS flood mechanics."""

from __future__ import annotations

import pytest

from bassim.attacks import (
    AttackEngine,
    AttackError,
    DosSpec,
    FdiSpec,
    RogueRegisterSpec,
    parse_clock_s,
    parse_temperature,
    spec_from_dict,
    validate_attacks,
)
from bassim.supervisor import PointId
from harness import System

SAT_SP = "ahu.analog-value:1"


class TestParsing:
    def test_temperature_units(self):
        assert parse_temperature("95F") == pytest.approx(35.0)
        assert parse_temperature("35C") == pytest.approx(35.0)
        assert parse_temperature("80F") == pytest.approx(26.6667, abs=1e-3)
        assert parse_temperature("-4F") == pytest.approx(-20.0)
        assert parse_temperature(12.5) == 12.5
        assert parse_temperature(35) == 35.0

    @pytest.mark.parametrize("bad", ["", "95", "95K", "hotF", True])
    def test_temperature_rejects(self, bad):
        with pytest.raises(AttackError):
            parse_temperature(bad)

    def test_clock_times(self):
        assert parse_clock_s("10:00") == 36_000.0
        assert parse_clock_s("07:30:15") == 27_015.0
        assert parse_clock_s(90) == 90.0
        assert parse_clock_s(0.5) == 0.5

    @pytest.mark.parametrize("bad", ["9:61", "bad", "10", "10:00:00:00"])
    def test_clock_rejects(self, bad):
        with pytest.raises(AttackError):
            parse_clock_s(bad)

    def test_fdi_from_dict(self):
        spec = spec_from_dict({
            "kind": "fdi", "target_point": SAT_SP, "value": "95F",
            "start": "10:00", "end": "11:00",
        })
        assert spec == FdiSpec(SAT_SP, 35.0, 36_000.0, 39_600.0)

    def test_dos_from_dict_defaults(self):
        spec = spec_from_dict({
            "kind": "device-dos", "target_device": "ahu",
            "start": "10:00", "end": "11:30",
        })
        assert isinstance(spec, DosSpec)
        assert spec.rate_hz == 1.0
        assert spec.end_s - spec.start_s == 5_400.0

    def test_rogue_register_from_dict(self):
        spec = spec_from_dict({"kind": "rogue-register", "start": 0, "end": 600,
                               "ttl": 120})
        assert spec == RogueRegisterSpec(0.0, 600.0, 120.0)

    def test_unknown_kind_and_missing_keys(self):
        with pytest.raises(AttackError):
            spec_from_dict({"kind": "ransomware", "start": 0, "end": 1})
        with pytest.raises(AttackError):
            spec_from_dict({"kind": "fdi", "start": 0, "end": 1})


class TestValidation:
    def test_window_must_be_inside_run(self):
        with pytest.raises(AttackError):
            validate_attacks([FdiSpec(SAT_SP, 35.0, 100.0, 50.0)], 86_400.0)
        with pytest.raises(AttackError):
            validate_attacks([FdiSpec(SAT_SP, 35.0, 100.0, 100.0)], 86_400.0)
        with pytest.raises(AttackError):
            validate_attacks([DosSpec("ahu", 0.0, 90_000.0)], 86_400.0)

    def test_rate_and_period_positive(self):
        with pytest.raises(AttackError):
            validate_attacks([DosSpec("ahu", 0.0, 10.0, rate_hz=0.0)], 100.0)
        with pytest.raises(AttackError):
            validate_attacks([FdiSpec(SAT_SP, 35.0, 0.0, 10.0,
                                      rewrite_period_s=0.0)], 100.0)

    def test_overlapping_dos_same_device_rejected(self):
        specs = [DosSpec("ahu", 0.0, 60.0), DosSpec("ahu", 50.0, 90.0)]
        with pytest.raises(AttackError):
            validate_attacks(specs, 100.0)

    def test_dos_on_distinct_devices_may_overlap(self):
        specs = [DosSpec("ahu", 0.0, 60.0), DosSpec("vav1", 0.0, 60.0),
                 DosSpec("ahu", 60.0, 90.0)]
        validate_attacks(specs, 100.0)

    def test_unknown_fdi_path(self):
        with pytest.raises(AttackError):
            validate_attacks([FdiSpec(SAT_SP, 35.0, 0.0, 10.0, via="mitm")], 100.0)


def sat_sp_effective(sys: System) -> float:
    return sys.devices["ahu"].core.point(PointId.parse(SAT_SP).oid).effective_float()


def attacker_audit(sys: System):
    return [r for r in sys.server.audit if r.actor == "attacker"]


class TestFdiCompromisedServer:
    def test_window_rewrites_and_automatic_recovery(self):
        sys = System(monitored=())
        sys.server.start(duration_s=400.0)
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([FdiSpec(SAT_SP, 35.0, 10.0, 130.0)], 400.0)
        sys.fabric.step(12.0)
        assert sat_sp_effective(sys) == pytest.approx(35.0)
        assert len(attacker_audit(sys)) == 1
        sys.fabric.step(140.0)
        assert len(attacker_audit(sys)) == 2  # writes at 10 and 70 only
        assert sat_sp_effective(sys) == pytest.approx(35.0)  # still injected
        sys.fabric.step(310.0)  # supervisor dispatch at 300 restores
        assert sat_sp_effective(sys) == pytest.approx(12.78)

    def test_interleaved_dispatch_is_overwritten_within_a_period(self):
        sys = System(monitored=())
        sys.server.start(duration_s=500.0)
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([FdiSpec(SAT_SP, 35.0, 200.0, 400.0)], 500.0)
        sys.fabric.step(310.0)
        assert sat_sp_effective(sys) == pytest.approx(12.78)  # dispatch at 300 won
        sys.fabric.step(330.0)
        assert sat_sp_effective(sys) == pytest.approx(35.0)  # retaken at 320

    def test_cancel_stops_future_rewrites(self):
        sys = System(monitored=())
        engine = AttackEngine(sys.fabric, server=sys.server)
        (aid,) = engine.schedule([FdiSpec(SAT_SP, 35.0, 10.0, 300.0)], 400.0)
        sys.fabric.step(15.0)
        assert engine.cancel(aid) is True
        assert engine.cancel("nope") is False
        sys.fabric.step(200.0)
        assert len(attacker_audit(sys)) == 1

    def test_priority_eight_variant_outranks_the_dispatch(self):
        # documented non-recovering extension: slot 8 beats the slot-16 dispatch
        sys = System(monitored=())
        sys.server.start(duration_s=700.0)
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([FdiSpec(SAT_SP, 35.0, 10.0, 70.0, priority=8)], 700.0)
        sys.fabric.step(12.0)
        assert sat_sp_effective(sys) == pytest.approx(35.0)
        sys.fabric.step(650.0)  # two dispatches after the window end
        assert sat_sp_effective(sys) == pytest.approx(35.0)

    def test_priority_out_of_range_rejected(self):
        with pytest.raises(AttackError):
            validate_attacks([FdiSpec(SAT_SP, 35.0, 0.0, 10.0, priority=0)], 100.0)
        with pytest.raises(AttackError):
            validate_attacks([FdiSpec(SAT_SP, 35.0, 0.0, 10.0, priority=17)], 100.0)

    def test_requires_server(self):
        sys = System(monitored=())
        engine = AttackEngine(sys.fabric, server=None)
        with pytest.raises(AttackError):
            engine.schedule([FdiSpec(SAT_SP, 35.0, 0.0, 60.0)], 100.0)

    def test_unknown_target_device(self):
        sys = System(monitored=())
        engine = AttackEngine(sys.fabric, server=sys.server)
        with pytest.raises(AttackError):
            engine.schedule([FdiSpec("boiler.analog-value:1", 35.0, 0.0, 60.0)], 100.0)


class TestFdiRogueDevice:
    def test_wire_write_lands_without_audit(self):
        sys = System(monitored=())
        engine = AttackEngine(sys.fabric, server=None)
        engine.schedule(
            [FdiSpec(SAT_SP, 35.0, 5.0, 65.0, via="rogue-device")], 100.0)
        sys.fabric.step(10.0)
        assert sat_sp_effective(sys) == pytest.approx(35.0)
        assert attacker_audit(sys) == []
        assert sys.fabric.live_foreign_devices() == []  # no registration needed

    def test_attack_traffic_confined_to_window(self):
        taps = []
        sys = System(tap=taps.append, monitored=())
        engine = AttackEngine(sys.fabric, server=None)
        engine.schedule(
            [FdiSpec(SAT_SP, 35.0, 5.0, 65.0, via="rogue-device",
                     rewrite_period_s=10.0)], 200.0)
        sys.fabric.step(200.0)
        times = [t.t_us for t in taps if t.src == engine.attacker_addr]
        assert len(times) == 6  # 5, 15, ..., 55
        assert min(times) >= 5_000_000 and max(times) < 65_000_000


class TestDeviceDos:
    def test_continuous_flood_keeps_device_down(self):
        sys = System()
        sys.server.start(duration_s=200.0)
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([DosSpec("ahu", 5.0, 65.0, rate_hz=1.0)], 200.0)
        sys.fabric.step(200.0)
        assert sys.devices["ahu"].core.reboot_count == 60
        for point, records in sys.server.trends.items():
            qualities = [r.quality for r in records]
            if point.startswith("ahu."):
                # cycle 0 polls at 0.5 (pre-attack), cycle 1 at 60.5 (down,
                # flood extends the reboot to ~74), cycles 2-3 recovered
                assert qualities == ["ok", "missing", "ok", "ok"]
            else:
                assert qualities == ["ok"] * 4  # isolation

    def test_flood_registers_attacker_as_foreign_device(self):
        sys = System()
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([DosSpec("ahu", 5.0, 65.0)], 200.0)
        sys.fabric.step(70.0)
        fd_addrs = [e.addr for e in sys.fabric.live_foreign_devices()]
        assert engine.attacker_addr in fd_addrs

    def test_recovery_announced_after_flood(self):
        sys = System()
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([DosSpec("ahu", 5.0, 65.0)], 200.0)
        sys.fabric.step(200.0)
        entry = sys.server.devices[1201]
        assert 70.0 < entry.last_seen < 80.0  # I-Am after last window closed

    def test_slow_flood_leaves_answer_gaps(self):
        # 0.05 req/s reinits every 20 s; with down windows [0,10) mod 20 the
        # fixed-phase polls at 0.5/3.5 always land inside -> missing
        sys = System()
        sys.server.start(duration_s=130.0)
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([DosSpec("ahu", 0.0, 100.0, rate_hz=0.05)], 200.0)
        sys.fabric.step(130.0)
        assert sys.devices["ahu"].core.reboot_count == 5
        assert [r.quality for r in sys.server.trends["ahu.analog-input:1"]] == [
            "missing", "missing", "ok"]

    def test_slow_flood_phase_can_miss_the_polls(self):
        # same rate shifted by 10 s: down windows [10,20) mod 20 never cover
        # the poll instants, so every poll succeeds despite 5 reboots
        sys = System()
        sys.server.start(duration_s=130.0)
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([DosSpec("ahu", 10.0, 110.0, rate_hz=0.05)], 200.0)
        sys.fabric.step(130.0)
        assert sys.devices["ahu"].core.reboot_count == 5
        assert [r.quality for r in sys.server.trends["ahu.analog-input:1"]] == [
            "ok", "ok", "ok"]

    def test_overlap_against_already_scheduled_rejected(self):
        sys = System()
        engine = AttackEngine(sys.fabric, server=sys.server)
        engine.schedule([DosSpec("ahu", 10.0, 60.0)], 200.0)
        with pytest.raises(AttackError):
            engine.schedule([DosSpec("ahu", 50.0, 80.0)], 200.0)
        engine.schedule([DosSpec("ahu", 60.0, 80.0)], 200.0)  # adjacent is fine

    def test_unknown_target_device(self):
        sys = System()
        engine = AttackEngine(sys.fabric, server=sys.server)
        with pytest.raises(AttackError):
            engine.schedule([DosSpec("boiler", 0.0, 10.0)], 100.0)


class TestRogueRegister:
    def test_registration_refreshes_until_end(self):
        taps = []
        sys = System(tap=taps.append, monitored=())
        engine = AttackEngine(sys.fabric, server=None)
        engine.schedule([RogueRegisterSpec(0.0, 300.0, ttl_s=120.0)], 400.0)
        sys.fabric.step(400.0)
        sends = [t.t_us for t in taps if t.src == engine.attacker_addr]
        assert len(sends) == 5  # 0, 60, 120, 180, 240 plus wire latency
        for k, t_us in enumerate(sends):
            assert 0 <= t_us - k * 60_000_000 < 10_000
        assert sys.fabric.live_foreign_devices() == []  # lease expired by 360s
