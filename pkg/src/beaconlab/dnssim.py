"""Wildcard DNS oracle for the attacker zone.

Every subdomain of the configured zone resolves to the payload-server
address, and every successful resolution is logged with its source and
timestamp: the DNS log is the primary beacon feedback channel. Runs as an
in-process resolver for simulation and as a real UDP responder for
integration tests. Authoritative-only: out-of-zone names are refused.
"""

from __future__ import annotations

import csv
import re
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from typing import Iterable

_NAME_RE = re.compile(r"^[a-z0-9_]([a-z0-9_-]{0,61}[a-z0-9_])?$")

QTYPE_A = 1
RCODE_NOERROR = 0
RCODE_REFUSED = 5


@dataclass(frozen=True)
class DnsQueryRecord:
    """One logged resolution: normalized name, source identity, timestamp."""

    name: str
    source: str
    timestamp: float


@dataclass(frozen=True)
class ZoneConfig:
    zone: str
    payload_address: str
    ttl_seconds: int = 0

    def __post_init__(self):
        if self.ttl_seconds < 0:
            raise ValueError("ttl_seconds must be >= 0")
        if not is_valid_name(normalize_name(self.zone)):
            raise ValueError(f"invalid zone: {self.zone!r}")


def normalize_name(name: str) -> str:
    return name.lower().rstrip(".")


def is_valid_name(name: str) -> bool:
    if not name or len(name) > 253:
        return False
    return all(_NAME_RE.match(label) for label in name.split("."))


class WildcardResolver:
    """Authoritative resolver for one zone with an append-only query log."""

    def __init__(self, config: ZoneConfig):
        self.config = config
        self.zone = normalize_name(config.zone)
        self.log: list[DnsQueryRecord] = []
        self._lock = threading.Lock()

    def in_zone(self, name: str) -> bool:
        return name == self.zone or name.endswith("." + self.zone)

    def resolve(self, name: str, source: str, now: float) -> str | None:
        """Answer for an address query; None means refused / no answer.

        In-zone names (apex included) all resolve to the payload address
        and are logged; invalid and out-of-zone names are not logged.
        """
        normalized = normalize_name(name)
        if not is_valid_name(normalized):
            return None
        if not self.in_zone(normalized):
            return None
        with self._lock:
            self.log.append(DnsQueryRecord(name=normalized, source=source, timestamp=now))
        return self.config.payload_address


def query_log_by_name(log: Iterable[DnsQueryRecord], name: str) -> list[DnsQueryRecord]:
    """All records for one exact normalized name, in timestamp order."""
    normalized = normalize_name(name)
    return sorted(
        (record for record in log if record.name == normalized),
        key=lambda record: record.timestamp,
    )


def write_query_log(log: Iterable[DnsQueryRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "source", "name"])
        for record in log:
            writer.writerow([record.timestamp, record.source, record.name])


def read_query_log(path: str) -> list[DnsQueryRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            records.append(DnsQueryRecord(name=row[2], source=row[1], timestamp=float(row[0])))
    return records


# --- wire format -----------------------------------------------------------

def encode_name(name: str) -> bytes:
    out = b""
    for label in normalize_name(name).split("."):
        raw = label.encode("ascii")
        out += bytes([len(raw)]) + raw
    return out + b"\x00"


def encode_query(txid: int, name: str, qtype: int = QTYPE_A) -> bytes:
    header = struct.pack(">HHHHHH", txid, 0x0100, 1, 0, 0, 0)
    return header + encode_name(name) + struct.pack(">HH", qtype, 1)


def parse_query(data: bytes) -> tuple[int, str, int, bytes] | None:
    """(txid, name, qtype, question bytes), or None for an unparsable packet."""
    if len(data) < 12:
        return None
    txid = struct.unpack(">H", data[0:2])[0]
    labels = []
    pos = 12
    while pos < len(data):
        length = data[pos]
        pos += 1
        if length == 0:
            break
        if length > 63 or pos + length > len(data):
            return None
        labels.append(data[pos : pos + length].decode("ascii", errors="replace"))
        pos += length
    else:
        return None
    if pos + 4 > len(data):
        return None
    qtype, _qclass = struct.unpack(">HH", data[pos : pos + 4])
    question = data[12 : pos + 4]
    return txid, ".".join(labels), qtype, question


def build_response(
    txid: int,
    question: bytes,
    rcode: int,
    address: str | None = None,
    ttl: int = 0,
) -> bytes:
    ancount = 1 if address is not None else 0
    flags = 0x8400 | (rcode & 0x0F)  # QR=1, AA=1
    header = struct.pack(">HHHHHH", txid, flags, 1, ancount, 0, 0)
    packet = header + question
    if address is not None:
        packet += struct.pack(">HHHIH", 0xC00C, QTYPE_A, 1, ttl, 4)
        packet += socket.inet_aton(address)
    return packet


def parse_answer_address(data: bytes) -> str | None:
    """Address from the first A answer of a response packet, if any."""
    parsed = parse_query(data)
    if parsed is None:
        return None
    ancount = struct.unpack(">H", data[6:8])[0]
    if ancount == 0:
        return None
    pos = 12 + len(parsed[3])
    if pos + 12 + 4 > len(data):
        return None
    rdlength = struct.unpack(">H", data[pos + 10 : pos + 12])[0]
    if rdlength != 4:
        return None
    return socket.inet_ntoa(data[pos + 12 : pos + 16])


class _UdpHandler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        responder: DnsResponder = self.server.responder  # type: ignore[attr-defined]
        reply = responder.handle_packet(data, self.client_address[0])
        if reply is not None:
            sock.sendto(reply, self.client_address)


class DnsResponder:
    """UDP responder answering address queries for one wildcard zone."""

    def __init__(self, config: ZoneConfig, host: str = "127.0.0.1", port: int = 0):
        self.resolver = WildcardResolver(config)
        self.config = config
        self._server = socketserver.ThreadingUDPServer((host, port), _UdpHandler)
        self._server.responder = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def handle_packet(self, data: bytes, source: str) -> bytes | None:
        parsed = parse_query(data)
        if parsed is None:
            return None
        txid, name, qtype, question = parsed
        normalized = normalize_name(name)
        if not is_valid_name(normalized) or not self.resolver.in_zone(normalized):
            return build_response(txid, question, RCODE_REFUSED)
        if qtype != QTYPE_A:
            return build_response(txid, question, RCODE_NOERROR)
        address = self.resolver.resolve(normalized, source, time.time())
        return build_response(
            txid, question, RCODE_NOERROR, address=address, ttl=self.config.ttl_seconds
        )

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
