import random
import socket

import pytest

from beaconlab.dnssim import (
    DnsQueryRecord,
    DnsResponder,
    QTYPE_A,
    RCODE_NOERROR,
    RCODE_REFUSED,
    WildcardResolver,
    ZoneConfig,
    encode_query,
    is_valid_name,
    normalize_name,
    parse_answer_address,
    parse_query,
    query_log_by_name,
    read_query_log,
    write_query_log,
)

CONFIG = ZoneConfig(zone="attacker.test", payload_address="192.0.2.7")


class TestResolve:
    def test_wildcard_subdomain(self):
        resolver = WildcardResolver(CONFIG)
        assert resolver.resolve("abc123.attacker.test", "src1", 1.0) == "192.0.2.7"
        assert len(resolver.log) == 1

    def test_zone_apex(self):
        resolver = WildcardResolver(CONFIG)
        assert resolver.resolve("attacker.test", "src1", 1.0) == "192.0.2.7"

    def test_out_of_zone_refused_and_unlogged(self):
        resolver = WildcardResolver(CONFIG)
        assert resolver.resolve("other.example", "src1", 1.0) is None
        assert resolver.log == []

    def test_invalid_name_refused_and_unlogged(self):
        resolver = WildcardResolver(CONFIG)
        assert resolver.resolve("bad..attacker.test", "src1", 1.0) is None
        assert resolver.resolve("", "src1", 1.0) is None
        assert resolver.log == []

    def test_suffix_match_requires_label_boundary(self):
        resolver = WildcardResolver(CONFIG)
        assert resolver.resolve("notattacker.test", "src1", 1.0) is None

    def test_normalization(self):
        resolver = WildcardResolver(CONFIG)
        resolver.resolve("A.Attacker.Test.", "src1", 1.0)
        resolver.resolve("a.attacker.test", "src2", 2.0)
        assert {record.name for record in resolver.log} == {"a.attacker.test"}

    def test_wildcard_totality_and_log_completeness(self):
        resolver = WildcardResolver(CONFIG)
        answered = 0
        for i in range(200):
            if resolver.resolve(f"sub{i}.attacker.test", "src", float(i)) is not None:
                answered += 1
        assert answered == 200 == len(resolver.log)


class TestQueryLog:
    def test_name_queried_twice_in_order(self):
        log = [
            DnsQueryRecord("a.attacker.test", "s1", 5.0),
            DnsQueryRecord("b.attacker.test", "s1", 1.0),
            DnsQueryRecord("a.attacker.test", "s2", 2.0),
        ]
        records = query_log_by_name(log, "A.attacker.test.")
        assert [record.timestamp for record in records] == [2.0, 5.0]

    def test_unknown_name_empty(self):
        assert query_log_by_name([], "x.attacker.test") == []

    def test_interleaved_log_matches_linear_scan(self):
        rng = random.Random(3)
        log = [
            DnsQueryRecord(f"n{rng.randrange(20)}.attacker.test", "s", rng.uniform(0, 100))
            for _ in range(1000)
        ]
        for probe in ("n3.attacker.test", "n19.attacker.test"):
            expected = sorted(
                (record for record in log if record.name == probe),
                key=lambda record: record.timestamp,
            )
            assert query_log_by_name(log, probe) == expected

    def test_file_round_trip(self, tmp_path):
        path = str(tmp_path / "dns.csv")
        log = [DnsQueryRecord("a.attacker.test", "10.0.0.1", 1.25)]
        write_query_log(log, path)
        assert read_query_log(path) == log


class TestNames:
    def test_normalize(self):
        assert normalize_name("A.B.C.") == "a.b.c"

    @pytest.mark.parametrize(
        "name,valid",
        [
            ("a.b", True),
            ("sub-1.zone.test", True),
            ("", False),
            ("-bad.zone", False),
            ("a." + "x" * 64, False),
        ],
    )
    def test_validity(self, name, valid):
        assert is_valid_name(name) is valid


class TestWireFormat:
    def test_query_round_trip(self):
        packet = encode_query(0x1234, "img.attacker.test")
        txid, name, qtype, question = parse_query(packet)
        assert (txid, name, qtype) == (0x1234, "img.attacker.test", QTYPE_A)
        assert question == packet[12:]

    def test_garbage_rejected(self):
        assert parse_query(b"\x00\x01") is None


def _udp_ask(address, packet, timeout=3.0):
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.sendto(packet, address)
        data, _ = sock.recvfrom(4096)
    return data


class TestResponder:
    @pytest.fixture()
    def responder(self):
        responder = DnsResponder(CONFIG, port=0)
        responder.start()
        yield responder
        responder.stop()

    def test_in_zone_address_query(self, responder):
        packet = encode_query(0xBEEF, "uniq1.attacker.test")
        reply = _udp_ask(responder.address, packet)
        assert reply[0:2] == packet[0:2]  # transaction id echoed
        assert reply[12 : 12 + len(packet) - 12] == packet[12:]  # question echoed
        assert parse_answer_address(reply) == "192.0.2.7"
        assert len(responder.resolver.log) == 1
        assert responder.resolver.log[0].name == "uniq1.attacker.test"

    def test_out_of_zone_refused(self, responder):
        reply = _udp_ask(responder.address, encode_query(1, "nope.example"))
        assert reply[3] & 0x0F == RCODE_REFUSED
        assert parse_answer_address(reply) is None
        assert responder.resolver.log == []

    def test_non_address_type_gets_no_answer(self, responder):
        reply = _udp_ask(responder.address, encode_query(2, "x.attacker.test", qtype=16))
        assert reply[3] & 0x0F == RCODE_NOERROR
        assert parse_answer_address(reply) is None

    def test_configured_ttl_in_answer(self):
        responder = DnsResponder(
            ZoneConfig(zone="attacker.test", payload_address="192.0.2.7", ttl_seconds=60),
            port=0,
        )
        responder.start()
        try:
            reply = _udp_ask(responder.address, encode_query(3, "t.attacker.test"))
            question_len = len(encode_query(3, "t.attacker.test")) - 12
            ttl = int.from_bytes(reply[12 + question_len + 6 : 12 + question_len + 10], "big")
            assert ttl == 60
        finally:
            responder.stop()


class TestZoneConfig:
    def test_negative_ttl_rejected(self):
        with pytest.raises(ValueError):
            ZoneConfig(zone="z.test", payload_address="192.0.2.1", ttl_seconds=-1)

    def test_invalid_zone_rejected(self):
        with pytest.raises(ValueError):
            ZoneConfig(zone="bad..zone", payload_address="192.0.2.1")
