"""Capture pipeline: pcap layout, JSONL log, flow stats, oracle agreement."""

from __future__ import annotations

import json
import struct
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pcap_oracle as oracle
from bassim import capture
from bassim.bacnet import apdu as ap
from bassim.bacnet import bvll
from bassim.bacnet.npdu import Npdu, encode_npdu
from bassim.bacnet.objects import PROP_PRESENT_VALUE, AppValue, ObjectId, ObjectType
from bassim.netfabric import NodeAddr, TapRecord
from harness import FIELD_NET, IP_NET, ROUTER_IP, SERVER_IP, System

EPOCH = 1_627_776_000  # 2021-08-01 00:00 UTC

SERVER = NodeAddr.ip(IP_NET, SERVER_IP)
ROUTER = NodeAddr.ip(IP_NET, ROUTER_IP)
ATTACKER = NodeAddr.ip(IP_NET, "10.13.254.99")

AV1 = ObjectId(ObjectType.ANALOG_VALUE, 1)


def rec(t_us, payload, src=SERVER, dst=ROUTER, segment=IP_NET, verdict="delivered"):
    return TapRecord(t_us, segment, src, dst, payload, verdict)


def unicast(apdu, npdu=None) -> bytes:
    return bvll.encode_frame(bvll.OriginalUnicast(npdu or Npdu(), apdu))


def whois_broadcast() -> bytes:
    return bvll.encode_frame(bvll.OriginalBroadcast(Npdu(), ap.build_who_is()))


class TestServiceClassification:
    def test_request_labels(self):
        cases = [
            (whois_broadcast(), "who-is"),
            (unicast(ap.build_i_am(ObjectId(ObjectType.DEVICE, 1201))), "i-am"),
            (unicast(ap.build_read_property(AV1, PROP_PRESENT_VALUE, 1)), "read-property"),
            (
                unicast(ap.build_write_property(AV1, PROP_PRESENT_VALUE, AppValue.real(35.0), 2)),
                "write-property",
            ),
            (
                unicast(ap.build_reinitialize(ap.REINIT_WARMSTART, invoke_id=3)),
                "reinitialize-device",
            ),
        ]
        for payload, expected in cases:
            assert capture.classify_service(payload, True) == expected

    def test_reply_labels(self):
        rp = ap.build_read_property(AV1, PROP_PRESENT_VALUE, 5)
        wp = ap.build_write_property(AV1, PROP_PRESENT_VALUE, AppValue.real(1.0), 6)
        cases = [
            (unicast(ap.build_simple_ack(wp)), "simple-ack"),
            (unicast(ap.build_read_ack(rp, AppValue.real(22.5))), "complex-ack"),
            (unicast(ap.build_error(rp, 1, 31)), "error"),
            (unicast(ap.build_reject(rp)), "reject"),
        ]
        for payload, expected in cases:
            assert capture.classify_service(payload, True) == expected

    def test_bvll_management_labels(self):
        reg = bvll.encode_frame(bvll.RegisterForeignDevice(60))
        assert capture.classify_service(reg, True) == "register-foreign-device"
        result = bvll.encode_frame(bvll.ResultFrame(0))
        assert capture.classify_service(result, True) == "bvlc-result"

    def test_forwarded_npdu_classified_by_inner_apdu(self):
        fwd = bvll.encode_frame(
            bvll.ForwardedNpdu("10.13.254.2", 47808, Npdu(), ap.build_who_is())
        )
        assert capture.classify_service(fwd, True) == "who-is"

    def test_field_segment_uses_raw_npdu(self):
        raw = encode_npdu(
            Npdu(), ap.encode_apdu(ap.build_reinitialize(ap.REINIT_WARMSTART, invoke_id=9))
        )
        assert capture.classify_service(raw, False) == "reinitialize-device"

    def test_unknown_service_numbers_keep_the_number(self):
        # confirmed service 7 is outside the implemented subset
        body = b"\x01\x00" + bytes([0x00, 0x05, 0x09, 0x07])
        frame = b"\x81\x0a" + struct.pack(">H", 4 + len(body)) + body
        assert capture.classify_service(frame, True) == "confirmed-7"

    def test_undecodable_bytes_are_malformed(self):
        assert capture.classify_service(b"\x81\x0b\x00", True) == "malformed"
        assert capture.classify_service(b"garbage", True) == "malformed"
        assert capture.classify_service(b"", True) == "malformed"
        assert capture.classify_service(b"\x02\x00", False) == "malformed"


class TestPcapLayout:
    def test_broadcast_packet_bytes(self, tmp_path):
        path = tmp_path / "one.pcap"
        n = capture.write_pcap([rec(2624, whois_broadcast(), dst=None)], path, epoch_s=EPOCH)
        assert n == 1
        data = path.read_bytes()
        assert data[:24] == struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
        ts_sec, ts_usec, incl, orig = struct.unpack_from("<IIII", data, 24)
        assert (ts_sec, ts_usec) == (EPOCH, 2624)
        frame = data[40:]
        assert incl == orig == len(frame) == 42 + 8
        assert frame[0:6] == b"\xff" * 6
        assert frame[6:12] == bytes.fromhex("02000a0dfe02")
        assert frame[12:14] == b"\x08\x00"
        ip = frame[14:34]
        assert ip[0] == 0x45
        assert struct.unpack_from(">H", ip, 2)[0] == 36  # 20 + 8 + 8
        assert ip[8] == 64 and ip[9] == 17
        assert ip[12:16] == bytes([10, 13, 254, 2])
        assert ip[16:20] == bytes([10, 13, 254, 255])
        assert oracle.checksum_valid(ip)
        assert struct.unpack_from(">HHHH", frame, 34) == (47808, 47808, 16, 0)
        assert frame[42:] == bytes.fromhex("81 0B 00 08 01 00 10 08".replace(" ", ""))

    def test_unicast_macs_come_from_the_ip_octets(self, tmp_path):
        payload = unicast(ap.build_read_property(AV1, PROP_PRESENT_VALUE, 1))
        path = tmp_path / "two.pcap"
        capture.write_pcap([rec(0, payload, src=SERVER, dst=ROUTER)], path)
        frame = path.read_bytes()[40:]
        assert frame[0:6] == bytes.fromhex("02000a0dfe05")
        assert frame[6:12] == bytes.fromhex("02000a0dfe02")
        assert frame[26:30] == bytes([10, 13, 254, 2])
        assert frame[30:34] == bytes([10, 13, 254, 5])

    def test_timestamp_splits_into_sec_usec(self, tmp_path):
        path = tmp_path / "ts.pcap"
        capture.write_pcap([rec(3_500_000, whois_broadcast(), dst=None)], path, epoch_s=EPOCH)
        ts_sec, ts_usec = struct.unpack_from("<II", path.read_bytes(), 24)
        assert (ts_sec, ts_usec) == (EPOCH + 3, 500_000)

    def test_records_are_written_in_time_order(self, tmp_path):
        # tap order is send order; stamps carry wire latency and may invert
        a = rec(5_000, whois_broadcast(), dst=None)
        b = rec(2_000, whois_broadcast(), dst=None)
        path = tmp_path / "ord.pcap"
        capture.write_pcap([a, b], path)
        pkts = oracle.dissect(path)
        assert [p.ts_usec for p in pkts] == [2_000, 5_000]

    def test_field_segment_records_are_rejected(self, tmp_path):
        raw = encode_npdu(Npdu(), ap.encode_apdu(ap.build_who_is()))
        station = NodeAddr.station(FIELD_NET, 1)
        bad = rec(0, raw, src=station, dst=None, segment=FIELD_NET)
        with pytest.raises(ValueError):
            capture.write_pcap([bad], tmp_path / "bad.pcap")

    def test_dropped_packets_still_reach_the_wire(self, tmp_path):
        ghost = NodeAddr.ip(IP_NET, "10.13.254.77")
        payload = unicast(ap.build_read_property(AV1, PROP_PRESENT_VALUE, 1))
        path = tmp_path / "drop.pcap"
        n = capture.write_pcap([rec(10, payload, dst=ghost, verdict="dropped")], path)
        assert n == 1 and len(oracle.dissect(path)) == 1


class TestReadPcap:
    def test_round_trip_preserves_packets(self, tmp_path):
        records = [
            rec(1_000, whois_broadcast(), dst=None),
            rec(2_000, unicast(ap.build_read_property(AV1, PROP_PRESENT_VALUE, 1))),
            rec(3_000, unicast(ap.build_simple_ack(
                ap.build_write_property(AV1, PROP_PRESENT_VALUE, AppValue.real(1.0), 2))),
                src=ROUTER, dst=SERVER),
        ]
        path = tmp_path / "rt.pcap"
        capture.write_pcap(records, path, epoch_s=EPOCH)
        back = capture.read_pcap(path)
        assert len(back) == 3
        assert [b.payload for b in back] == [r.payload for r in records]
        assert [b.t_us - EPOCH * 1_000_000 for b in back] == [1_000, 2_000, 3_000]
        assert back[0].dst is None  # broadcast MAC maps back to a broadcast
        assert back[1].src.label() == f"{SERVER_IP}:47808"
        assert back[1].dst.label() == f"{ROUTER_IP}:47808"

    def test_summaries_survive_a_round_trip(self, tmp_path):
        records = [
            rec(k * 1_000_000, unicast(ap.build_read_property(AV1, PROP_PRESENT_VALUE, k)))
            for k in range(10)
        ] + [rec(500_000, whois_broadcast(), dst=None)]
        path = tmp_path / "rt2.pcap"
        capture.write_pcap(records, path, epoch_s=EPOCH)
        orig = capture.summarize(records)
        again = capture.summarize(capture.read_pcap(path))
        for a, b in zip(orig["flows"], again["flows"]):
            for key in ("src", "dst", "packets", "bytes", "services"):
                assert a[key] == b[key]
            assert a["mean_rate_pps"] == pytest.approx(b["mean_rate_pps"])

    def test_rejects_non_pcap_bytes(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"this is not a capture")
        with pytest.raises(ValueError):
            capture.read_pcap(path)


def run_system(seed: str = "captest", duration: float = 130.0):
    """Short supervised run with a foreign device and one device reboot."""
    log = capture.PacketLog()
    sys_ = System(seed=seed, tap=log.tap)
    sys_.fabric.attach(ATTACKER, lambda d: None)
    reg = bvll.encode_frame(bvll.RegisterForeignDevice(300))
    sys_.fabric.call_at(0.5, lambda: sys_.fabric.send(ATTACKER, ROUTER, reg))
    sys_.fabric.call_at(5.0, lambda: sys_.reboot_device(station=1))
    sys_.server.start(duration)
    sys_.fabric.step(duration)
    return sys_, log


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("cap")
    sys_, log = run_system()
    pcap_path = out / "traffic.pcap"
    jsonl_path = out / "traffic.jsonl"
    capture.write_pcap(log.ip_packets(), pcap_path, epoch_s=EPOCH)
    capture.write_jsonl(log.packets, jsonl_path)
    lines = [json.loads(s) for s in jsonl_path.read_text().splitlines()]
    return {
        "log": log,
        "pcap": pcap_path,
        "lines": lines,
        "oracle": oracle.dissect(pcap_path),
    }


class TestEndToEndCapture:
    def test_conservation(self, bundle):
        assert len(bundle["lines"]) == len(bundle["log"].packets)
        ip_lines = [l for l in bundle["lines"] if l["segment"] == IP_NET]
        assert len(bundle["oracle"]) == len(ip_lines) == len(bundle["log"].ip_packets())

    def test_timestamps_cohere_with_the_jsonl(self, bundle):
        taps = sorted(bundle["log"].ip_packets(), key=lambda r: r.t_us)
        for pkt, tap in zip(bundle["oracle"], taps):
            assert pkt.ts_us - EPOCH * 1_000_000 == tap.t_us
        ts = [l["t"] for l in bundle["lines"]]
        assert ts == sorted(ts)

    def test_independent_dissection_agrees_on_every_service(self, bundle):
        taps = sorted(bundle["log"].ip_packets(), key=lambda r: r.t_us)
        for pkt, tap in zip(bundle["oracle"], taps):
            assert pkt.service == capture.classify_service(tap.payload, True)
            assert pkt.bacnet == tap.payload

    def test_expected_traffic_mix(self, bundle):
        counts = Counter(p.service for p in bundle["oracle"])
        assert counts["who-is"] >= 1
        assert counts["register-foreign-device"] == 1
        assert counts["bvlc-result"] == 1
        assert counts["i-am"] >= 8  # discovery plus the reboot announcement
        assert counts["read-property"] >= 40
        assert counts["complex-ack"] >= 40
        assert counts["write-property"] >= 12
        assert "malformed" not in counts

    def test_addresses_are_exactly_the_participants(self, bundle):
        ips = {SERVER_IP, ROUTER_IP, "10.13.254.99"}
        for pkt in bundle["oracle"]:
            assert pkt.src_ip in ips
            assert pkt.dst_ip in ips | {"10.13.254.255"}
            assert pkt.src_port == pkt.dst_port == 47808
            assert pkt.src_mac == b"\x02\x00" + bytes(int(x) for x in pkt.src_ip.split("."))

    def test_jsonl_schema(self, bundle):
        for line in bundle["lines"]:
            assert set(line) == {"v", "t", "segment", "src", "dst", "len", "service", "verdict"}
            assert line["v"] == 1
            assert line["segment"] in (IP_NET, FIELD_NET)
            assert line["verdict"] in ("delivered", "dropped")
            assert line["len"] > 0

    def test_field_segment_appears_only_in_jsonl(self, bundle):
        field = [l for l in bundle["lines"] if l["segment"] == FIELD_NET]
        assert field, "field bus traffic missing from the log"
        assert any(l["service"] == "reinitialize-device" for l in field)
        assert any(l["src"] == f"net{FIELD_NET}/st0" for l in field)
        for pkt in bundle["oracle"]:
            assert pkt.src_ip.startswith("10.13.254.")

    def test_forwarded_broadcast_reaches_the_foreign_device(self, bundle):
        # reboot I-Am is rebroadcast on the LAN and forwarded to the attacker
        to_attacker = [p for p in bundle["oracle"] if p.dst_ip == "10.13.254.99"]
        assert to_attacker
        assert {p.service for p in to_attacker} <= {"i-am", "bvlc-result"}
        assert any(p.bacnet[1] == 0x04 for p in to_attacker)  # forwarded-npdu

    def test_dropped_unicast_is_logged_with_its_verdict(self, tmp_path):
        log = capture.PacketLog()
        sys_ = System(seed="droptest", tap=log.tap)
        probe = NodeAddr.station(FIELD_NET, 9)
        raw = encode_npdu(Npdu(), ap.encode_apdu(ap.build_who_is()))
        sys_.fabric.call_at(0.2, lambda: sys_.fabric.send(
            probe, NodeAddr.station(FIELD_NET, 250), raw))
        sys_.fabric.step(1.0)
        path = tmp_path / "t.jsonl"
        capture.write_jsonl(log.packets, path)
        lines = [json.loads(s) for s in path.read_text().splitlines()]
        dropped = [l for l in lines if l["verdict"] == "dropped"]
        assert len(dropped) == 1
        assert dropped[0]["dst"] == f"net{FIELD_NET}/st250"

    def test_same_seed_reruns_are_byte_identical(self, tmp_path):
        outputs = []
        for run in range(2):
            _, log = run_system(duration=61.0)
            pcap_path = tmp_path / f"r{run}.pcap"
            jsonl_path = tmp_path / f"r{run}.jsonl"
            capture.write_pcap(log.ip_packets(), pcap_path, epoch_s=EPOCH)
            capture.write_jsonl(log.packets, jsonl_path)
            outputs.append((pcap_path.read_bytes(), jsonl_path.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_different_seed_changes_the_bytes(self, tmp_path):
        _, a = run_system(duration=61.0)
        _, b = run_system(seed="captest2", duration=61.0)
        pa, pb = tmp_path / "a.pcap", tmp_path / "b.pcap"
        capture.write_pcap(a.ip_packets(), pa, epoch_s=EPOCH)
        capture.write_pcap(b.ip_packets(), pb, epoch_s=EPOCH)
        assert pa.read_bytes() != pb.read_bytes()


class TestFlowStats:
    def test_ten_packets_over_a_minute(self):
        # first at 0, last at 60 s: 10 packets / 60 s
        times = [i * 6_666_666 for i in range(9)] + [60_000_000]
        payload = bytes(60)
        records = [rec(t, payload) for t in times]
        stats = capture.summarize(records)
        assert stats["packets"] == 10 and stats["bytes"] == 600
        (flow,) = stats["flows"]
        assert flow["packets"] == 10
        assert flow["bytes"] == 600
        assert flow["mean_rate_pps"] == pytest.approx(10 / 60, abs=1e-3)
        assert flow["per_minute"] == [[0, 9], [1, 1]]

    def test_empty_capture(self):
        assert capture.summarize([]) == {
            "v": 1, "packets": 0, "bytes": 0, "span_s": 0.0, "flows": [],
        }

    def test_flood_rate_matches_the_schedule(self):
        payload = unicast(ap.build_reinitialize(ap.REINIT_WARMSTART, invoke_id=1))
        records = [rec(k * 1_000_000, payload, src=ATTACKER) for k in range(90)]
        stats = capture.summarize(records)
        (flow,) = stats["flows"]
        assert abs(flow["mean_rate_pps"] - 1.0) <= 0.05
        assert flow["services"] == {"reinitialize-device": 90}

    def test_single_packet_flow_has_no_rate(self):
        stats = capture.summarize([rec(5, whois_broadcast(), dst=None)])
        assert stats["flows"][0]["mean_rate_pps"] == 0.0

    def test_flows_are_sorted_and_keyed_by_address_pair(self):
        records = [
            rec(0, whois_broadcast(), src=ROUTER, dst=None),
            rec(1, whois_broadcast(), src=SERVER, dst=ROUTER),
            rec(2, whois_broadcast(), src=ATTACKER, dst=ROUTER),
        ]
        stats = capture.summarize(records)
        pairs = [(f["src"], f["dst"]) for f in stats["flows"]]
        assert pairs == sorted(pairs)
        assert ("10.13.254.5:47808", "10.13.254.255:47808") in pairs

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=0, max_value=10_000_000_000),
                st.sampled_from(["10.13.254.2", "10.13.254.5", "10.13.254.99"]),
                st.sampled_from(["10.13.254.2", "10.13.254.5", None]),
                st.integers(min_value=1, max_value=50),
            ),
            max_size=80,
        )
    )
    def test_totals_always_balance(self, raws):
        records = []
        for t_us, src_ip, dst_ip, size in raws:
            src = NodeAddr.ip(IP_NET, src_ip)
            dst = NodeAddr.ip(IP_NET, dst_ip) if dst_ip else None
            records.append(TapRecord(t_us, IP_NET, src, dst, bytes(size), "delivered"))
        stats = capture.summarize(records)
        assert stats["packets"] == len(records)
        assert stats["bytes"] == sum(len(r.payload) for r in records)
        assert sum(f["packets"] for f in stats["flows"]) == len(records)
        assert sum(f["bytes"] for f in stats["flows"]) == stats["bytes"]
        for flow in stats["flows"]:
            assert sum(flow["services"].values()) == flow["packets"]
            assert sum(n for _, n in flow["per_minute"]) == flow["packets"]

    def test_write_flows_emits_valid_json(self, tmp_path):
        records = [rec(0, whois_broadcast(), dst=None)]
        path = tmp_path / "flows.json"
        stats = capture.write_flows(records, path)
        assert json.loads(path.read_text()) == stats
